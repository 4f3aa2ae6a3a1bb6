"""
Diffusion module.

Noise schedule, samplers, the training loop and the nowcast operator.
"""

from hailcast.diffusion.nowcast import nowcast, nowcast_patch
from hailcast.diffusion.samplers import (
    SAMPLER_REGISTRY,
    ddim_chain,
    ddim_timesteps,
    ddpm_chain,
    get_sampler,
    sample_ddim,
    sample_ddpm,
)
from hailcast.diffusion.schedule import (
    NoiseSchedule,
    build_schedule,
    forward_noise,
    schedule_from_settings,
)
from hailcast.diffusion.trainer import (
    AdamW,
    LossResult,
    TrainingSample,
    TrainState,
    draw_batch,
    make_sample,
    train,
    training_loss,
    validation_loss,
)

__all__ = [
    "SAMPLER_REGISTRY",
    "AdamW",
    "LossResult",
    "NoiseSchedule",
    "TrainState",
    "TrainingSample",
    "build_schedule",
    "ddim_chain",
    "ddim_timesteps",
    "ddpm_chain",
    "draw_batch",
    "forward_noise",
    "get_sampler",
    "make_sample",
    "nowcast",
    "nowcast_patch",
    "sample_ddim",
    "sample_ddpm",
    "schedule_from_settings",
    "train",
    "training_loss",
    "validation_loss",
]
