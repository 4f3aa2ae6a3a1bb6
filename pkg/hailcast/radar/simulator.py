"""
Synthetic Radar Simulator

Advected Gaussian storm cells on a toroidal grid, standing in for a
reflectivity archive. Each frame is

    field(t) = clip(sum_c a_c(t) * exp(-|p - center_c(t)|^2 / (2 r_c^2)) + noise, 0, 1)

with centers moving by their velocity every frame (wrapping around the
edges), amplitudes multiplied by a growth factor (capped at 1) and
zero-mean Gaussian noise.
"""

from dataclasses import dataclass

import numpy as np
import structlog

from hailcast.core.errors import ConfigurationError, InvariantViolation
from hailcast.core.rng import derive_rng

logger = structlog.get_logger(__name__)

MIN_FRAMES = 10
MIN_EXTENT = 32


@dataclass(frozen=True)
class StormCell:
    """
    One convective cell.

    Attributes:
        center: (row, col) in grid units at frame 0
        velocity: (d_row, d_col) per frame
        amplitude: peak normalized reflectivity in (0, 1]
        radius: Gaussian radius in grid units
        growth_rate: per-frame multiplicative amplitude factor
    """
    center: tuple[float, float]
    velocity: tuple[float, float]
    amplitude: float
    radius: float
    growth_rate: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.amplitude <= 1.0:
            raise ConfigurationError("StormCell amplitude must be in (0, 1]", amplitude=self.amplitude)
        if self.radius <= 0:
            raise ConfigurationError("StormCell radius must be positive", radius=self.radius)
        if self.growth_rate <= 0:
            raise ConfigurationError("StormCell growth_rate must be positive")

    def amplitude_at(self, t: int) -> float:
        return min(self.amplitude * self.growth_rate**t, 1.0)

    def center_at(self, t: int, height: int, width: int) -> tuple[float, float]:
        return (
            (self.center[0] + self.velocity[0] * t) % height,
            (self.center[1] + self.velocity[1] * t) % width,
        )


@dataclass
class RadarSequence:
    """Reflectivity movie [F x H x W] normalized to [0, 1]."""
    frames: np.ndarray
    frame_interval_minutes: float = 6.0

    def __post_init__(self) -> None:
        if self.frames.ndim != 3:
            raise InvariantViolation("RadarSequence frames must be [F x H x W]")
        if self.frames.size and (self.frames.min() < 0.0 or self.frames.max() > 1.0):
            raise InvariantViolation("RadarSequence values must lie in [0, 1]")
        if self.frame_interval_minutes <= 0:
            raise ConfigurationError("frame_interval_minutes must be positive")

    @property
    def n_frames(self) -> int:
        return int(self.frames.shape[0])

    @property
    def shape(self) -> tuple[int, int]:
        return int(self.frames.shape[1]), int(self.frames.shape[2])


def random_cells(
    rng: np.random.Generator,
    n_cells: int,
    height: int,
    width: int,
    max_speed: float = 1.5,
) -> list[StormCell]:
    """Draw hail-like convective cells with random motion and growth."""
    scale = min(height, width)
    cells = []
    for _ in range(n_cells):
        cells.append(
            StormCell(
                center=(float(rng.uniform(0, height)), float(rng.uniform(0, width))),
                velocity=(
                    float(rng.uniform(-max_speed, max_speed)),
                    float(rng.uniform(-max_speed, max_speed)),
                ),
                amplitude=float(rng.uniform(0.4, 1.0)),
                radius=float(rng.uniform(0.04, 0.10) * scale),
                growth_rate=float(rng.uniform(0.97, 1.03)),
            )
        )
    return cells


def render_frame(
    cells: list[StormCell],
    t: int,
    height: int,
    width: int,
) -> np.ndarray:
    """Noise-free, unclipped superposition of the cells at frame t."""
    rows = np.arange(height, dtype=np.float64)[:, None]
    cols = np.arange(width, dtype=np.float64)[None, :]
    field = np.zeros((height, width), dtype=np.float64)
    for cell in cells:
        cr, cc = cell.center_at(t, height, width)
        dr = np.abs(rows - cr)
        dc = np.abs(cols - cc)
        # Toroidal (minimum-image) distance.
        dr = np.minimum(dr, height - dr)
        dc = np.minimum(dc, width - dc)
        field += cell.amplitude_at(t) * np.exp(-(dr**2 + dc**2) / (2 * cell.radius**2))
    return field


def generate_sequence(
    seed: int,
    frames: int,
    height: int,
    width: int,
    n_cells: int,
    noise_std: float = 0.01,
    frame_interval_minutes: float = 6.0,
    max_speed: float = 1.5,
    cells: list[StormCell] | None = None,
    stream: int = 0,
) -> RadarSequence:
    """
    Simulate one reflectivity movie.

    Args:
        seed: Root seed; with ``stream`` fully determines the output
        frames: Frame count (>= 10)
        height, width: Grid extents (>= 32)
        n_cells: Number of random cells (ignored when ``cells`` is given)
        noise_std: Std of the additive zero-mean noise (0 disables it)
        frame_interval_minutes: Time between frames
        max_speed: Largest |velocity| component of random cells
        cells: Explicit cells instead of random ones
        stream: Sub-stream index when generating several sequences

    Returns:
        RadarSequence with values clipped to [0, 1]
    """
    if frames < MIN_FRAMES:
        raise ConfigurationError(f"frames must be >= {MIN_FRAMES}", frames=frames)
    if height < MIN_EXTENT or width < MIN_EXTENT:
        raise ConfigurationError(
            f"height and width must be >= {MIN_EXTENT}", height=height, width=width
        )
    if n_cells < 0 or noise_std < 0:
        raise ConfigurationError("n_cells and noise_std must be nonnegative")

    rng = derive_rng(seed, "sequence", stream)
    if cells is None:
        cells = random_cells(rng, n_cells, height, width, max_speed)

    movie = np.empty((frames, height, width), dtype=np.float64)
    for t in range(frames):
        field = render_frame(cells, t, height, width)
        if noise_std > 0:
            field += rng.normal(0.0, noise_std, size=field.shape)
        movie[t] = np.clip(field, 0.0, 1.0)

    logger.debug(
        "Generated radar sequence",
        seed=seed,
        stream=stream,
        frames=frames,
        cells=len(cells),
    )
    return RadarSequence(frames=movie, frame_interval_minutes=frame_interval_minutes)
