"""
Gradient verification.

Compares analytic gradients from the tape against central finite
differences on randomly sampled parameter coordinates.
"""

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field

import numpy as np
import structlog

from hailcast.core.errors import ConfigurationError, GradientCheckError
from hailcast.core.rng import derive_rng
from hailcast.numeric.tensor import Tensor, no_grad

logger = structlog.get_logger(__name__)

FD_STEP = 1e-4
# Below this magnitude both gradients are treated as zero.
ABS_FLOOR = 1e-6


@dataclass
class CoordinateCheck:
    """One sampled coordinate."""
    parameter: str
    index: tuple[int, ...]
    analytic: float
    numeric: float
    rel_error: float


@dataclass
class GradCheckReport:
    """Outcome of a gradient check over every parameter."""
    rel_tol: float
    coordinates_checked: int = 0
    worst: CoordinateCheck | None = None
    per_parameter: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.worst is None or self.worst.rel_error < self.rel_tol


def relative_error(analytic: float, numeric: float) -> float:
    scale = max(abs(analytic), abs(numeric), ABS_FLOOR)
    return abs(analytic - numeric) / scale


def grad_check(
    params: Mapping[str, Tensor],
    loss_fn: Callable[[], Tensor],
    rel_tol: float = 1e-3,
    samples: int = 32,
    seed: int = 0,
    raise_on_failure: bool = True,
) -> GradCheckReport:
    """
    Check analytic gradients of ``loss_fn`` against finite differences.

    Args:
        params: Named leaf tensors with requires_grad set
        loss_fn: Rebuilds the scalar loss from the current parameter values
        rel_tol: Maximum accepted relative error
        samples: Coordinates per parameter (all coordinates if fewer exist)
        seed: Seed for coordinate sampling
        raise_on_failure: Raise GradientCheckError instead of returning

    Returns:
        GradCheckReport naming the worst coordinate
    """
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    if loss.size != 1:
        raise ConfigurationError("grad_check needs a scalar loss", shape=list(loss.shape))
    loss.backward()

    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    report = GradCheckReport(rel_tol=rel_tol)
    rng = derive_rng(seed, "grad_check")

    for name, p in params.items():
        flat = p.data.reshape(-1)
        if flat.size <= samples:
            coords = np.arange(flat.size)
        else:
            coords = np.sort(rng.choice(flat.size, size=samples, replace=False))

        worst_here = 0.0
        worst_index: tuple[int, ...] = ()
        for c in coords:
            original = flat[c]
            with no_grad():
                flat[c] = original + FD_STEP
                plus = float(loss_fn().data)
                flat[c] = original - FD_STEP
                minus = float(loss_fn().data)
            flat[c] = original

            numeric = (plus - minus) / (2 * FD_STEP)
            a = float(analytic[name].reshape(-1)[c])
            err = relative_error(a, numeric)
            report.coordinates_checked += 1
            if err > worst_here:
                worst_here = err
                worst_index = tuple(int(i) for i in np.unravel_index(c, p.shape))

            if report.worst is None or err > report.worst.rel_error:
                report.worst = CoordinateCheck(
                    parameter=name,
                    index=tuple(int(i) for i in np.unravel_index(c, p.shape)),
                    analytic=a,
                    numeric=numeric,
                    rel_error=err,
                )
        report.per_parameter[name] = worst_here

        if worst_here >= rel_tol:
            logger.warning(
                "Gradient check mismatch",
                parameter=name,
                rel_error=worst_here,
                rel_tol=rel_tol,
            )
            if raise_on_failure:
                raise GradientCheckError(
                    f"Gradient of {name!r} disagrees with finite differences",
                    parameter=name,
                    rel_error=worst_here,
                    index=list(worst_index),
                )

    logger.info(
        "Gradient check complete",
        coordinates=report.coordinates_checked,
        worst_rel_error=report.worst.rel_error if report.worst else 0.0,
    )
    return report
