"""Panoramic ECG view synthesis: synthesize the signal at any electrode angle
from a handful of recorded leads, with per-record angular calibration."""

__version__ = "0.1.0"

from .geometry import ViewAngle, unit_direction
from .metrics import MetricReport, psnr, ssim_1d
from .model import GeoVTModel, ModelConfig, load_checkpoint, save_checkpoint
from .records import MultiViewRecord, panobench_synthetic, read_record, write_record
from .training import stage1_anypre, stage2_devcal, stage3_ofcal, stage_config

__all__ = [
    "ViewAngle",
    "unit_direction",
    "MetricReport",
    "psnr",
    "ssim_1d",
    "GeoVTModel",
    "ModelConfig",
    "load_checkpoint",
    "save_checkpoint",
    "MultiViewRecord",
    "panobench_synthetic",
    "read_record",
    "write_record",
    "stage1_anypre",
    "stage2_devcal",
    "stage3_ofcal",
    "stage_config",
    "__version__",
]
