"""
Spatiotemporal Encoding

Maps a patch-position index and a time-step index to sinusoidal codes and
modulates token features by element-wise multiplication:

    rho(k)[2i]   = sin(k / 10000^(2i/8))
    rho(k)[2i+1] = cos(k / 10000^(2i/8))        i = 0..3

The position code and the time code are concatenated into 16 values,
tiled across the feature width and multiplied into each token row. There
are no learned parameters.
"""

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from hailcast.core.errors import BoundsError, ConfigurationError
from hailcast.numeric.ops import mul
from hailcast.numeric.tensor import Tensor

CODE_WIDTH = 8
MODULATION_WIDTH = 2 * CODE_WIDTH
FREQUENCY_BASE = 10000.0
MAX_CAPACITY = 65536
DEFAULT_CAPACITY = 16


class SpenVariant(str, Enum):
    """Which embeddings modulate queries and keys."""
    NOEMBD = "noembd"
    TIMEEMBD = "timeembd"
    FULL = "spen"

    @classmethod
    def ordered(cls) -> list["SpenVariant"]:
        """Reporting order used by the ablation table."""
        return [cls.NOEMBD, cls.TIMEEMBD, cls.FULL]


@dataclass(frozen=True)
class SpenCode:
    """
    Sinusoidal code of one index.

    ``bits`` documents the addressing capacity only; it does not enter
    ``rho``.
    """
    index: int
    capacity: int
    bits: tuple[int, ...]
    rho: tuple[float, ...]

    def as_array(self) -> np.ndarray:
        return np.array(self.rho, dtype=np.float64)


_FREQUENCIES = FREQUENCY_BASE ** (np.arange(0, CODE_WIDTH, 2, dtype=np.float64) / CODE_WIDTH)


def sinusoid(indices: np.ndarray) -> np.ndarray:
    """Interleaved sin/cos codes for an integer array, shape [..., 8]."""
    angles = np.asarray(indices, dtype=np.float64)[..., None] / _FREQUENCIES
    out = np.empty(angles.shape[:-1] + (CODE_WIDTH,), dtype=np.float64)
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def _check_capacity(capacity: int) -> None:
    if not 1 <= capacity <= MAX_CAPACITY:
        raise BoundsError(
            f"capacity must be in [1, {MAX_CAPACITY}]", capacity=capacity
        )


def encode_index(index: int, capacity: int = DEFAULT_CAPACITY) -> SpenCode:
    """Sinusoidal code for ``index`` in ``[0, capacity)``."""
    _check_capacity(capacity)
    if not 0 <= index < capacity:
        raise BoundsError(
            f"index {index} outside [0, {capacity})", index=index, capacity=capacity
        )
    width = math.ceil(math.log2(capacity)) if capacity > 1 else 0
    bits = tuple(int(b) for b in format(index, f"0{width}b")) if width else ()
    rho = tuple(float(v) for v in sinusoid(np.array(index)))
    return SpenCode(index=index, capacity=capacity, bits=bits, rho=rho)


_ONES = np.ones(CODE_WIDTH, dtype=np.float64)


def compose_codes(pos: SpenCode, time: SpenCode, variant: SpenVariant) -> np.ndarray:
    """
    Modulation vector of length 16: [position code | time code].

    TimeEmbd replaces the position half with ones; NoEmbd is all ones.
    """
    variant = SpenVariant(variant)
    if variant is SpenVariant.NOEMBD:
        return np.ones(MODULATION_WIDTH, dtype=np.float64)
    pos_part = pos.as_array() if variant is SpenVariant.FULL else _ONES
    return np.concatenate([pos_part, time.as_array()])


def check_width(d: int) -> None:
    if d < MODULATION_WIDTH or d % MODULATION_WIDTH:
        raise ConfigurationError(
            f"feature width {d} must be a positive multiple of {MODULATION_WIDTH}", d=d
        )


@lru_cache(maxsize=64)
def _code_table(capacity: int) -> np.ndarray:
    table = sinusoid(np.arange(capacity))
    table.setflags(write=False)
    return table


def modulation_matrix(
    pos_index: np.ndarray,
    time_index: np.ndarray,
    variant: SpenVariant,
    d: int,
    pos_capacity: int = DEFAULT_CAPACITY,
    time_capacity: int = DEFAULT_CAPACITY,
) -> np.ndarray:
    """Per-token modulation rows, shape [b x d]."""
    check_width(d)
    variant = SpenVariant(variant)
    pos_index = np.asarray(pos_index, dtype=np.int64)
    time_index = np.asarray(time_index, dtype=np.int64)
    if pos_index.shape != time_index.shape or pos_index.ndim != 1:
        raise ConfigurationError("pos_index and time_index must be equal-length vectors")

    b = pos_index.shape[0]
    if variant is SpenVariant.NOEMBD:
        return np.ones((b, d), dtype=np.float64)

    for name, idx, cap in (
        ("position", pos_index, pos_capacity),
        ("time", time_index, time_capacity),
    ):
        _check_capacity(cap)
        if b and (idx.min() < 0 or idx.max() >= cap):
            raise BoundsError(
                f"{name} index outside [0, {cap})",
                minimum=int(idx.min()),
                maximum=int(idx.max()),
            )

    time_codes = _code_table(time_capacity)[time_index]
    if variant is SpenVariant.FULL:
        pos_codes = _code_table(pos_capacity)[pos_index]
    else:
        pos_codes = np.ones((b, CODE_WIDTH), dtype=np.float64)
    rows = np.concatenate([pos_codes, time_codes], axis=1)
    return np.tile(rows, (1, d // MODULATION_WIDTH))


def apply_spen(
    h: Tensor,
    pos_index: np.ndarray,
    time_index: np.ndarray,
    variant: SpenVariant,
    pos_capacity: int = DEFAULT_CAPACITY,
    time_capacity: int = DEFAULT_CAPACITY,
) -> Tensor:
    """
    Modulate token rows of ``h`` [b x d] by their spatiotemporal codes.

    NoEmbd returns ``h`` itself, so it is the exact identity.
    """
    if h.ndim != 2:
        raise ConfigurationError("apply_spen expects [b x d] features", shape=list(h.shape))
    check_width(h.shape[1])
    if SpenVariant(variant) is SpenVariant.NOEMBD:
        return h
    mod = modulation_matrix(
        pos_index, time_index, variant, h.shape[1], pos_capacity, time_capacity
    )
    if mod.shape[0] != h.shape[0]:
        raise ConfigurationError(
            "one position/time index per token is required",
            tokens=h.shape[0],
            indices=mod.shape[0],
        )
    return mul(h, Tensor(mod))
