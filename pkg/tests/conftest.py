"""Shared fixtures: small model configs and benchmark records."""

import numpy as np
import pytest

from panecg.model import GeoVTModel, ModelConfig
from panecg.records import panobench_synthetic


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(
        channels=8, depth=2, d_embed=12, d_attn=8, n_freqs=2,
        upsample_factors=(2, 2), n_leads=48, se_ratio=4,
    )


@pytest.fixture()
def tiny_model(tiny_config):
    return GeoVTModel(tiny_config, seed=0)


@pytest.fixture(scope="session")
def bench_records():
    # three clean subjects, 4 s at 250 Hz
    return panobench_synthetic(0, 3, duration=4.0, jitter_std_deg=0.0)


def random_inputs(seed, bsz=2, l=3, q=2, t=32):
    rng = np.random.default_rng(seed)
    signals = rng.standard_normal((bsz, l, t)).astype(np.float32)
    rec_angles = np.stack(
        [rng.uniform(10, 170, size=(bsz, l)), rng.uniform(-170, 170, size=(bsz, l))], axis=-1
    ).astype(np.float32)
    query_angles = np.stack(
        [rng.uniform(10, 170, size=(bsz, q)), rng.uniform(-170, 170, size=(bsz, q))], axis=-1
    ).astype(np.float32)
    return signals, rec_angles, query_angles
