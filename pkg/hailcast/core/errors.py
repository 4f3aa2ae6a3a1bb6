"""
Error hierarchy.

Every failure the pipeline can report carries a stable machine code and
a details dict, mirroring the error envelope used on the wire:

    {"error": {"code": "FORMAT_ERROR", "message": "...", "details": {...}}}

The CLI maps these onto exit codes (1 for user/config errors, 2 for
internal invariant violations).
"""

from typing import Any


class HailcastError(Exception):
    """Base class for all pipeline errors."""

    code = "HAILCAST_ERROR"
    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_dict(self) -> dict[str, Any]:
        """Serialize in the error envelope format."""
        return {
            "error": {
                "code": self.code,
                "message": self.message,
                "details": self.details,
            }
        }


class ConfigurationError(HailcastError):
    """Invalid geometry, ranges or knob combinations."""

    code = "CONFIGURATION_ERROR"


class DimensionError(HailcastError):
    """Tensor extents do not agree."""

    code = "DIMENSION_ERROR"


class BoundsError(HailcastError):
    """An index lies outside its declared capacity."""

    code = "BOUNDS_ERROR"


class NonFiniteError(HailcastError):
    """A primitive produced NaN or Inf."""

    code = "NON_FINITE"
    exit_code = 2


class FormatError(HailcastError):
    """Malformed FGT1 payload."""

    code = "FORMAT_ERROR"

    def __init__(self, message: str, offset: int, **details: Any):
        super().__init__(f"{message} (at byte offset {offset})", offset=offset, **details)
        self.offset = offset


class EmptyResultError(HailcastError):
    """An operation would produce nothing (e.g. too few frames)."""

    code = "EMPTY_RESULT"


class AggregationError(HailcastError):
    """Stitching found a missing or duplicated grid cell."""

    code = "AGGREGATION_ERROR"

    def __init__(self, message: str, cell: tuple[int, int], **details: Any):
        super().__init__(message, cell=list(cell), **details)
        self.cell = cell


class DivergenceError(HailcastError):
    """Training loss became non-finite."""

    code = "TRAINING_DIVERGENCE"

    def __init__(self, message: str, step: int, **details: Any):
        super().__init__(message, step=step, **details)
        self.step = step


class SamplingDivergenceError(HailcastError):
    """Sampler state became non-finite."""

    code = "SAMPLING_DIVERGENCE"

    def __init__(self, message: str, step: int, **details: Any):
        super().__init__(message, step=step, **details)
        self.step = step


class GradientCheckError(HailcastError):
    """Analytic gradient disagrees with finite differences."""

    code = "GRADIENT_CHECK_FAILED"
    exit_code = 2

    def __init__(self, message: str, parameter: str, **details: Any):
        super().__init__(message, parameter=parameter, **details)
        self.parameter = parameter


class EvaluationError(HailcastError):
    """Prediction and truth manifests do not match."""

    code = "EVALUATION_ERROR"

    def __init__(self, message: str, missing: list[str], **details: Any):
        super().__init__(message, missing=missing, **details)
        self.missing = missing


class RenderError(HailcastError):
    """Field cannot be rendered (values outside [0, 1])."""

    code = "RENDER_ERROR"


class InvariantViolation(HailcastError):
    """An internal invariant failed; indicates a bug, not bad input."""

    code = "INVARIANT_VIOLATION"
    exit_code = 2
