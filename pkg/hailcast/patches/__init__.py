"""Patch grid module: tiling, reference sets and stitching."""

from hailcast.patches.grid import (
    NEIGHBOR_OFFSETS,
    REFERENCE_MODES,
    PatchIndex,
    ReferencePatchSet,
    TargetPatch,
    decompose,
    full_grid,
    grid_shape,
    neighborhood,
    patch_histories,
    reference_set,
    stitch,
)

__all__ = [
    "NEIGHBOR_OFFSETS",
    "REFERENCE_MODES",
    "PatchIndex",
    "ReferencePatchSet",
    "TargetPatch",
    "decompose",
    "full_grid",
    "grid_shape",
    "neighborhood",
    "patch_histories",
    "reference_set",
    "stitch",
]
