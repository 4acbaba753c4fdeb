"""Signal-quality metrics for synthesized ECG leads.

PSNR uses the per-lead ground-truth dynamic range as the peak and is capped
so machine-precision matches keep aggregates finite.  SSIM is the sliding
Gaussian-window form adapted to 1-D signals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "PSNR_CAP_DB",
    "psnr_per_lead",
    "psnr",
    "ssim_per_lead",
    "ssim_1d",
    "MetricReport",
]

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 64
SSIM_SIGMA = 8.0
_K1, _K2 = 0.01, 0.03


def _as_leads(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ValueError(f"expected (t,) or (leads, t) signals, got shape {a.shape}")
    return a


def _ranges(y: np.ndarray) -> np.ndarray:
    r = y.max(axis=-1) - y.min(axis=-1)
    if np.any(r == 0):
        raise ValueError("ground-truth lead is constant; dynamic range undefined")
    return r


def psnr_per_lead(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """10*log10(R^2 / MSE) per lead, R = ground-truth dynamic range, capped."""
    y_hat, y = _as_leads(y_hat), _as_leads(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    r = _ranges(y)
    mse = np.mean((y_hat - y) ** 2, axis=-1)
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(r**2 / mse)
    return np.minimum(db, PSNR_CAP_DB)


def psnr(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean per-lead PSNR in dB."""
    return float(psnr_per_lead(y_hat, y).mean())


def _gauss_kernel(length: int, sigma: float) -> np.ndarray:
    x = np.arange(length, dtype=np.float64) - (length - 1) / 2.0
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def ssim_per_lead(
    y_hat: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA
) -> np.ndarray:
    """Mean sliding-window SSIM per lead (valid positions only)."""
    y_hat, y = _as_leads(y_hat), _as_leads(y)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: {y_hat.shape} vs {y.shape}")
    t = y.shape[-1]
    if t < window:
        raise ValueError(f"signal length {t} shorter than SSIM window {window}")
    r = _ranges(y)
    c1 = (_K1 * r) ** 2
    c2 = (_K2 * r) ** 2
    k = _gauss_kernel(window, sigma)

    def win_stats(a):
        v = np.lib.stride_tricks.sliding_window_view(a, window, axis=-1)
        return v @ k  # windowed weighted mean, shape (leads, positions)

    mu_x = win_stats(y_hat)
    mu_y = win_stats(y)
    var_x = win_stats(y_hat * y_hat) - mu_x**2
    var_y = win_stats(y * y) - mu_y**2
    cov = win_stats(y_hat * y) - mu_x * mu_y
    c1 = c1[:, None]
    c2 = c2[:, None]
    s = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / ((mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2))
    return s.mean(axis=-1)


def ssim_1d(y_hat: np.ndarray, y: np.ndarray, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean per-lead 1-D SSIM."""
    return float(ssim_per_lead(y_hat, y, window, sigma).mean())


@dataclass
class MetricReport:
    """Evaluation summary for one task configuration."""

    task: str  # reconstruction | synthesis
    n_input: int
    n_supervised: int
    n_synth: int
    psnr_per_lead: list[float]
    ssim_per_lead: list[float]
    stage: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.psnr_per_lead))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.ssim_per_lead))

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_input": self.n_input,
            "n_supervised": self.n_supervised,
            "n_synth": self.n_synth,
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "psnr_per_lead": list(map(float, self.psnr_per_lead)),
            "ssim_per_lead": list(map(float, self.ssim_per_lead)),
            "stage": self.stage,
            "seed": self.seed,
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def to_csv(reports: Sequence["MetricReport"], path: str | Path) -> None:
        rows = ["task,stage,seed,n_input,n_supervised,n_synth,mean_psnr,mean_ssim"]
        for r in reports:
            rows.append(
                f"{r.task},{r.stage},{r.seed},{r.n_input},{r.n_supervised},{r.n_synth},"
                f"{r.mean_psnr:.4f},{r.mean_ssim:.6f}"
            )
        Path(path).write_text("\n".join(rows) + "\n")
