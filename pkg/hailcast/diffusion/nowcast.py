"""
Nowcast

End-to-end forecast operator: tile the history field, sample every
target patch against its reference set, and stitch the results.

Patches are independent sub-problems and run on a thread pool; results
are collected in grid order so the stitched field does not depend on the
worker count. Ensemble members draw from separate streams
("sample", window, patch, member) and are averaged.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import structlog

from hailcast.config import Settings
from hailcast.core.errors import ConfigurationError
from hailcast.core.rng import derive_rng
from hailcast.diffusion.samplers import get_sampler
from hailcast.diffusion.schedule import NoiseSchedule, schedule_from_settings
from hailcast.model.coding import last_patch_frame
from hailcast.model.params import DenoiserParams
from hailcast.numeric.tensor import no_grad
from hailcast.patches.grid import (
    PatchIndex,
    TargetPatch,
    grid_shape,
    patch_histories,
    reference_set,
    stitch,
)

logger = structlog.get_logger(__name__)


def _check_geometry(history: np.ndarray, params: DenoiserParams, settings: Settings) -> None:
    if history.ndim != 3:
        raise ConfigurationError(
            "history must be [N x H x W]", shape=list(history.shape)
        )
    if history.shape[1:] != (settings.height, settings.width):
        raise ConfigurationError(
            f"history field {history.shape[1:]} does not match configured "
            f"{settings.height}x{settings.width}",
        )
    if params.config.patch != settings.patch:
        raise ConfigurationError(
            f"model was trained on {params.config.patch}-pixel patches, settings use {settings.patch}",
        )
    if params.config.reference_mode != settings.reference_mode:
        raise ConfigurationError(
            f"model was trained with {params.config.reference_mode!r} references, "
            f"settings use {settings.reference_mode!r}",
        )


def nowcast_patch(
    history: np.ndarray,
    index: PatchIndex,
    params: DenoiserParams,
    settings: Settings,
    sched: NoiseSchedule | None = None,
    *,
    window_id: int = 0,
    member: int = 0,
) -> TargetPatch:
    """
    M-step nowcast [1 x H x W x M] for one patch of interest.

    The chain runs in the model's target coding and is decoded against
    the patch's last history frame before clipping.
    """
    _check_geometry(history, params, settings)
    sched = sched or schedule_from_settings(settings)
    grid = grid_shape(settings.height, settings.width, settings.patch)
    refs = reference_set(
        settings.reference_mode, index, grid, patch_histories(history, settings.patch)
    )
    sampler = get_sampler(settings.sampler)
    extra = {"steps": settings.sampler_steps} if settings.sampler == "ddim" else {}
    coding = params.config.coding
    last = last_patch_frame(history, *index.cell, settings.patch)
    with no_grad():
        return sampler(
            refs,
            params,
            sched,
            target=index,
            forecast_steps=settings.forecast_steps,
            rng=derive_rng(settings.seed, "sample", window_id, index.linear_id, member),
            decode=lambda z: coding.decode(z, last),
            **extra,
        )


def nowcast(
    field_history: np.ndarray,
    params: DenoiserParams,
    settings: Settings,
    sched: NoiseSchedule | None = None,
    *,
    window_id: int = 0,
) -> np.ndarray:
    """
    Full-field nowcast.

    Args:
        field_history: [N x H_full x W_full]

    Returns:
        [M x H_full x W_full] values in [0, 1]
    """
    _check_geometry(field_history, params, settings)
    sched = sched or schedule_from_settings(settings)
    rows, cols = grid_shape(settings.height, settings.width, settings.patch)
    cells = [PatchIndex.at(r, c, cols) for r in range(rows) for c in range(cols)]

    def run(cell: PatchIndex) -> TargetPatch:
        # Worker threads start with graph recording on.
        with no_grad():
            members = [
                nowcast_patch(
                    field_history,
                    cell,
                    params,
                    settings,
                    sched,
                    window_id=window_id,
                    member=k,
                ).values
                for k in range(settings.ensemble_size)
            ]
        return TargetPatch(values=np.mean(members, axis=0), index=cell)

    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        results = list(pool.map(run, cells))

    field = stitch([(tp.index, tp.frames()) for tp in results], (rows, cols))
    logger.info(
        "Nowcast complete",
        window=window_id,
        patches=len(cells),
        sampler=settings.sampler,
        ensemble=settings.ensemble_size,
    )
    return field
