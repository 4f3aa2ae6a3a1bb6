"""
Patch Grid

Splits full fields into non-overlapping square tiles, gathers the
reference set that conditions a target tile, and stitches per-tile
nowcasts back into a full field.

Layouts follow the task definition:
- reference patches: [T x H x W x N] (N history steps last)
- target patch: [1 x H x W x M]
Full fields keep time first: [F x H_full x W_full].
"""

from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from hailcast.core.errors import AggregationError, BoundsError, ConfigurationError

# Center first, then clockwise from north: N, NE, E, SE, S, SW, W, NW.
NEIGHBOR_OFFSETS: tuple[tuple[int, int], ...] = (
    (0, 0),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
    (-1, -1),
)


@dataclass(frozen=True, order=True)
class PatchIndex:
    """Position of a tile in the patch grid."""
    grid_row: int
    grid_col: int
    linear_id: int

    @classmethod
    def at(cls, row: int, col: int, cols: int) -> "PatchIndex":
        return cls(grid_row=row, grid_col=col, linear_id=row * cols + col)

    @property
    def cell(self) -> tuple[int, int]:
        return self.grid_row, self.grid_col


@dataclass
class ReferencePatchSet:
    """Conditioning tiles: patches [T x H x W x N] and their grid indices."""
    patches: np.ndarray
    indices: list[PatchIndex]

    def __post_init__(self) -> None:
        if self.patches.ndim != 4 or self.patches.shape[0] < 1:
            raise ConfigurationError(
                "reference patches must be [T x H x W x N] with T >= 1",
                shape=list(self.patches.shape),
            )
        if len(self.indices) != self.patches.shape[0]:
            raise ConfigurationError("one PatchIndex per reference patch is required")

    @property
    def n_patches(self) -> int:
        return int(self.patches.shape[0])

    @property
    def history_steps(self) -> int:
        return int(self.patches.shape[3])


@dataclass
class TargetPatch:
    """Forecast tile [1 x H x W x M] at a grid position."""
    values: np.ndarray
    index: PatchIndex

    def __post_init__(self) -> None:
        if self.values.ndim != 4 or self.values.shape[0] != 1:
            raise ConfigurationError(
                "target patch must be [1 x H x W x M]", shape=list(self.values.shape)
            )

    @property
    def forecast_steps(self) -> int:
        return int(self.values.shape[3])

    def frames(self) -> np.ndarray:
        """Values as [M x H x W]."""
        return np.ascontiguousarray(self.values[0].transpose(2, 0, 1))


def grid_shape(height: int, width: int, patch: int) -> tuple[int, int]:
    if patch < 1 or height % patch or width % patch:
        raise ConfigurationError(
            f"patch {patch} must divide field {height}x{width}",
            height=height,
            width=width,
            patch=patch,
        )
    return height // patch, width // patch


def decompose(field: np.ndarray, patch: int) -> list[tuple[PatchIndex, np.ndarray]]:
    """
    Cut a field into row-major, non-overlapping ``patch x patch`` tiles.

    Leading axes (e.g. time) are carried along: a [F x H x W] field gives
    [F x patch x patch] tiles.
    """
    if field.ndim < 2:
        raise ConfigurationError("decompose needs at least a 2-D field")
    height, width = field.shape[-2:]
    rows, cols = grid_shape(height, width, patch)
    tiles = []
    for r in range(rows):
        for c in range(cols):
            tile = field[..., r * patch : (r + 1) * patch, c * patch : (c + 1) * patch]
            tiles.append((PatchIndex.at(r, c, cols), np.array(tile, copy=True)))
    return tiles


def stitch(
    tiles: Sequence[tuple[PatchIndex, np.ndarray]],
    grid: tuple[int, int],
) -> np.ndarray:
    """
    Reassemble tiles into a full field; exact inverse of ``decompose``.

    Raises AggregationError naming the first missing, duplicated or
    out-of-grid cell.
    """
    rows, cols = grid
    if not tiles:
        raise AggregationError("no tiles to stitch", cell=(0, 0))
    seen: dict[tuple[int, int], np.ndarray] = {}
    for index, tile in tiles:
        r, c = index.cell
        if not (0 <= r < rows and 0 <= c < cols):
            raise AggregationError(f"tile {index.cell} lies outside the {rows}x{cols} grid", cell=(r, c))
        if index.cell in seen:
            raise AggregationError(f"duplicate tile for cell {index.cell}", cell=(r, c))
        seen[index.cell] = tile

    for r in range(rows):
        for c in range(cols):
            if (r, c) not in seen:
                raise AggregationError(f"missing tile for cell ({r}, {c})", cell=(r, c))

    first = seen[(0, 0)]
    patch = first.shape[-1]
    out = np.empty(first.shape[:-2] + (rows * patch, cols * patch), dtype=first.dtype)
    for (r, c), tile in seen.items():
        if tile.shape != first.shape:
            raise AggregationError(
                f"tile {(r, c)} has shape {tile.shape}, expected {first.shape}", cell=(r, c)
            )
        out[..., r * patch : (r + 1) * patch, c * patch : (c + 1) * patch] = tile
    return out


def patch_histories(history: np.ndarray, patch: int) -> dict[int, np.ndarray]:
    """
    Per-tile history stacks keyed by linear id.

    Args:
        history: [N x H_full x W_full]

    Returns:
        linear_id -> [patch x patch x N]
    """
    return {
        index.linear_id: np.ascontiguousarray(tile.transpose(1, 2, 0))
        for index, tile in decompose(history, patch)
    }


def _check_center(center: PatchIndex, grid: tuple[int, int]) -> None:
    rows, cols = grid
    if not (0 <= center.grid_row < rows and 0 <= center.grid_col < cols):
        raise BoundsError(f"center {center.cell} outside {rows}x{cols} grid")
    if center.linear_id != center.grid_row * cols + center.grid_col:
        raise BoundsError("center linear_id inconsistent with grid", cell=list(center.cell))


def neighborhood(
    center: PatchIndex,
    grid: tuple[int, int],
    history: Mapping[int, np.ndarray],
) -> ReferencePatchSet:
    """
    Center tile plus its 8 neighbours (T = 9).

    Ordered center first, then clockwise from north. Neighbours falling
    off the grid are replaced by the center tile (same data, same index).
    """
    _check_center(center, grid)
    rows, cols = grid
    indices = []
    for dr, dc in NEIGHBOR_OFFSETS:
        r, c = center.grid_row + dr, center.grid_col + dc
        if 0 <= r < rows and 0 <= c < cols:
            indices.append(PatchIndex.at(r, c, cols))
        else:
            indices.append(center)
    patches = np.stack([history[i.linear_id] for i in indices])
    return ReferencePatchSet(patches=patches, indices=indices)


def full_grid(
    center: PatchIndex,
    grid: tuple[int, int],
    history: Mapping[int, np.ndarray],
) -> ReferencePatchSet:
    """Every tile of the grid (T = rows * cols), center first then row-major."""
    _check_center(center, grid)
    rows, cols = grid
    indices = [center] + [
        PatchIndex.at(r, c, cols)
        for r in range(rows)
        for c in range(cols)
        if (r, c) != center.cell
    ]
    patches = np.stack([history[i.linear_id] for i in indices])
    return ReferencePatchSet(patches=patches, indices=indices)


REFERENCE_MODES: dict[str, Callable[..., ReferencePatchSet]] = {
    "neighborhood": neighborhood,
    "full_grid": full_grid,
}


def reference_set(
    mode: str,
    center: PatchIndex,
    grid: tuple[int, int],
    history: Mapping[int, np.ndarray],
) -> ReferencePatchSet:
    """Build the reference set for ``center`` with the configured mode."""
    if mode not in REFERENCE_MODES:
        raise ConfigurationError(f"Unknown reference mode {mode!r}", allowed=list(REFERENCE_MODES))
    return REFERENCE_MODES[mode](center, grid, history)
