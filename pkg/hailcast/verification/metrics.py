"""
Continuous Scores

MSE, PSNR and SSIM on normalized [0, 1] fields, plus the persistence
baseline forecast.
"""

import math
from functools import lru_cache

import numpy as np
from scipy.signal import correlate2d

from hailcast.core.errors import ConfigurationError, DimensionError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DATA_RANGE = 1.0


def _same_shape(pred: np.ndarray, truth: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(
            f"prediction shape {pred.shape} does not match truth shape {truth.shape}",
            pred=list(pred.shape),
            truth=list(truth.shape),
        )
    return pred, truth


def mse(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = _same_shape(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def psnr_from_mse(value: float, max_val: float = DATA_RANGE) -> float:
    """10 log10(max^2 / mse); ``math.inf`` when mse is 0."""
    if value <= 0.0:
        return math.inf
    return float(10.0 * np.log10(max_val**2 / value))


def psnr(pred: np.ndarray, truth: np.ndarray, max_val: float = DATA_RANGE) -> float:
    return psnr_from_mse(mse(pred, truth), max_val)


@lru_cache(maxsize=4)
def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """Normalized 2-D Gaussian weights, ``size x size``."""
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    window /= window.sum()
    window.setflags(write=False)
    return window


def ssim_map(a: np.ndarray, b: np.ndarray, data_range: float = DATA_RANGE) -> np.ndarray:
    """SSIM at every valid window position of two 2-D images."""
    window = gaussian_window()
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ConfigurationError(
            f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}",
            shape=list(a.shape),
        )
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def filt(x: np.ndarray) -> np.ndarray:
        return correlate2d(x, window, mode="valid")

    mu_a, mu_b = filt(a), filt(b)
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(pred: np.ndarray, truth: np.ndarray) -> float:
    """
    Mean SSIM over valid windows.

    2-D inputs are one image; [M x H x W] inputs are averaged over the M
    time slices.
    """
    pred, truth = _same_shape(pred, truth)
    if pred.ndim == 2:
        return float(ssim_map(pred, truth).mean())
    if pred.ndim != 3:
        raise DimensionError("ssim expects [H x W] or [M x H x W]", shape=list(pred.shape))
    return float(np.mean([ssim_map(p, t).mean() for p, t in zip(pred, truth, strict=True)]))


def persistence_baseline(history: np.ndarray, m: int) -> np.ndarray:
    """Repeat the last observed frame ``m`` times: [N x H x W] -> [M x H x W]."""
    history = np.asarray(history)
    if history.ndim != 3 or history.shape[0] < 1:
        raise ConfigurationError("persistence needs a non-empty [N x H x W] history")
    if m < 1:
        raise ConfigurationError("forecast length must be >= 1", m=m)
    return np.repeat(history[-1:], m, axis=0)
