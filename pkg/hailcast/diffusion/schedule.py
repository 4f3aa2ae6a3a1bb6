"""
Noise Schedule

Linear beta schedule and the forward (noising) process

    x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps

Timesteps are 1-based: t = 1 .. T_diff. ``alpha_bar(0)`` is 1 so the
forward process at t = 0 is the identity.
"""

from dataclasses import dataclass

import numpy as np

from hailcast.config import Settings
from hailcast.core.errors import BoundsError, ConfigurationError, DimensionError


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Per-step noise levels, stored 0-based (index t - 1 holds step t).

    Attributes:
        beta: [T_diff] values in (0, 1)
        alpha: 1 - beta
        alpha_bar: running product of alpha
    """
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    @property
    def steps(self) -> int:
        return int(self.beta.shape[0])

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.steps:
            raise BoundsError(f"timestep {t} outside [1, {self.steps}]", t=t)
        return t - 1

    def beta_at(self, t: int) -> float:
        return float(self.beta[self._check(t)])

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check(t)])

    def alpha_bar_at(self, t: int) -> float:
        """alpha_bar for step t, with alpha_bar(0) = 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[self._check(t)])

    def to_dict(self) -> dict[str, float | int]:
        return {
            "steps": self.steps,
            "beta_start": float(self.beta[0]),
            "beta_end": float(self.beta[-1]),
        }


def build_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear interpolation of beta from ``beta_start`` to ``beta_end``."""
    if steps < 2:
        raise ConfigurationError("diffusion needs at least 2 steps", steps=steps)
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigurationError(
            "beta range must satisfy 0 < beta_start <= beta_end < 1",
            beta_start=beta_start,
            beta_end=beta_end,
        )
    beta = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def schedule_from_settings(settings: Settings) -> NoiseSchedule:
    return build_schedule(settings.diffusion_steps, settings.beta_start, settings.beta_end)


def forward_noise(
    x0: np.ndarray,
    t: int,
    eps: np.ndarray,
    sched: NoiseSchedule,
) -> np.ndarray:
    """Noise ``x0`` to step ``t`` with the given standard-normal draw."""
    x0 = np.asarray(x0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape:
        raise DimensionError(
            f"eps shape {eps.shape} does not match x0 shape {x0.shape}",
            x0=list(x0.shape),
            eps=list(eps.shape),
        )
    ab = sched.alpha_bar_at(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
