"""
Target Coding

Maps a target patch [H x W x M] to the quantity the denoiser diffuses and
back. With the persistence anchor the chain runs on

    z = (future - last_history_frame) / residual_scale

so an untrained or uninformed denoiser already lands near the persistence
forecast, and the learned part is the change over the lead times. The
"none" anchor diffuses ``future / residual_scale`` directly.
"""

from dataclasses import dataclass

import numpy as np

from hailcast.core.errors import ConfigurationError, DimensionError

ANCHORS = ("persistence", "none")


@dataclass(frozen=True)
class TargetCoding:
    """Anchor mode plus the scale applied to the anchored residual."""
    anchor: str = "persistence"
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.anchor not in ANCHORS:
            raise ConfigurationError(f"Unknown target anchor {self.anchor!r}", allowed=list(ANCHORS))
        if not self.scale > 0:
            raise ConfigurationError("residual scale must be positive", scale=self.scale)

    def anchor_frames(self, last_frame: np.ndarray, m: int) -> np.ndarray:
        """Anchor broadcast over the forecast steps, shape [H x W x M]."""
        if last_frame.ndim != 2:
            raise DimensionError("anchor frame must be [H x W]", shape=list(last_frame.shape))
        if self.anchor == "none":
            return np.zeros((*last_frame.shape, m))
        return np.repeat(np.asarray(last_frame, dtype=np.float64)[:, :, None], m, axis=2)

    def encode(self, values: np.ndarray, last_frame: np.ndarray) -> np.ndarray:
        return (values - self.anchor_frames(last_frame, values.shape[2])) / self.scale

    def decode(self, z: np.ndarray, last_frame: np.ndarray) -> np.ndarray:
        """Unclipped field values for a diffused sample."""
        return self.anchor_frames(last_frame, z.shape[2]) + self.scale * z


def last_patch_frame(history: np.ndarray, row: int, col: int, patch: int) -> np.ndarray:
    """Most recent history frame of one grid cell; ``history`` is [N x H x W]."""
    return history[-1, row * patch : (row + 1) * patch, col * patch : (col + 1) * patch]
