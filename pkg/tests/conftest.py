"""
Test Configuration and Fixtures

Shared fixtures for all tests including:
- Tiny run settings rooted in a temporary directory
- A generated toy dataset
- Toy denoiser configurations and parameters
"""

from pathlib import Path

import numpy as np
import pytest

from hailcast.config import Settings
from hailcast.model.params import DenoiserConfig, DenoiserParams, init_params
from hailcast.numeric.tensor import set_precision
from hailcast.radar.dataset import build_dataset


def get_test_settings(out_dir: Path, **overrides) -> Settings:
    """Get settings for a 32x32 field, 2x2 patch grid and a 1-block model."""
    values = dict(
        out_dir=out_dir,
        height=32,
        width=32,
        frames=10,
        n_sequences=4,
        n_cells=3,
        history_steps=2,
        forecast_steps=2,
        patch=16,
        token_patch=4,
        d_model=16,
        n_heads=2,
        n_blocks=1,
        diffusion_steps=10,
        sampler="ddim",
        sampler_steps=3,
        train_steps=2,
        batch_size=1,
        val_samples=2,
        ckpt_every=1,
        eval_every=1,
        log_every=1,
        log_format="console",
    )
    values.update(overrides)
    return Settings(**values)


@pytest.fixture(autouse=True)
def float64_precision():
    """Every test runs in the default 64-bit precision."""
    set_precision("float64")
    yield
    set_precision("float64")


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_settings(tmp_path: Path) -> Settings:
    return get_test_settings(tmp_path / "run")


@pytest.fixture
def tiny_dataset(tiny_settings: Settings) -> Path:
    """Eight windows: six train, one val, one test."""
    return build_dataset(tiny_settings)


@pytest.fixture
def toy_config() -> DenoiserConfig:
    return DenoiserConfig(
        patch=8,
        token_patch=4,
        d_model=16,
        n_blocks=1,
        n_heads=2,
        history_steps=2,
        forecast_steps=2,
    )


@pytest.fixture
def toy_params(toy_config: DenoiserConfig) -> DenoiserParams:
    return init_params(toy_config, seed=0, zero_init_outputs=False)
