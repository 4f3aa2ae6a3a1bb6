"""Core module initialization."""

from hailcast.core.errors import (
    AggregationError,
    BoundsError,
    ConfigurationError,
    DimensionError,
    DivergenceError,
    EmptyResultError,
    EvaluationError,
    FormatError,
    GradientCheckError,
    HailcastError,
    InvariantViolation,
    NonFiniteError,
    RenderError,
    SamplingDivergenceError,
)
from hailcast.core.logging import configure_logging
from hailcast.core.rng import derive_rng

__all__ = [
    "AggregationError",
    "BoundsError",
    "ConfigurationError",
    "DimensionError",
    "DivergenceError",
    "EmptyResultError",
    "EvaluationError",
    "FormatError",
    "GradientCheckError",
    "HailcastError",
    "InvariantViolation",
    "NonFiniteError",
    "RenderError",
    "SamplingDivergenceError",
    "configure_logging",
    "derive_rng",
]
