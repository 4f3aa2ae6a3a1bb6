"""
Samplers

Reverse-process samplers for one target patch. Both chains are written
against a plain noise-estimate callable ``eps_fn(x_t, t) -> eps`` so the
same update algebra serves the denoiser and analytic oracles.

- ddpm: ancestral chain over every step T_diff .. 1
- ddim: deterministic (eta = 0) chain over a uniformly strided subset

Outputs are clipped to [0, 1] after the final step only. A ``decode``
callable maps the chain's final state to field values before that clip.
"""

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import structlog

from hailcast.core.errors import ConfigurationError, NonFiniteError, SamplingDivergenceError
from hailcast.core.rng import derive_rng
from hailcast.diffusion.schedule import NoiseSchedule
from hailcast.model.denoiser import denoise_patch, encode_references, merge_tokens
from hailcast.model.params import DenoiserParams
from hailcast.model.spen import SpenVariant
from hailcast.numeric.tensor import no_grad
from hailcast.patches.grid import PatchIndex, ReferencePatchSet, TargetPatch

logger = structlog.get_logger(__name__)

EpsFn = Callable[[np.ndarray, int], np.ndarray]
DecodeFn = Callable[[np.ndarray], np.ndarray]


def _check_finite(x: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(x)):
        raise SamplingDivergenceError("sampler state became non-finite", step=step)


def _call_eps(eps_fn: EpsFn, x: np.ndarray, t: int) -> np.ndarray:
    try:
        eps = np.asarray(eps_fn(x, t), dtype=np.float64)
    except NonFiniteError as e:
        raise SamplingDivergenceError("noise estimate became non-finite", step=t) from e
    _check_finite(eps, t)
    return eps


def ddpm_chain(
    eps_fn: EpsFn,
    shape: tuple[int, ...],
    sched: NoiseSchedule,
    rng: np.random.Generator,
    deterministic: bool = False,
    x_start: np.ndarray | None = None,
) -> np.ndarray:
    """
    Ancestral DDPM chain; returns the unclipped x_0.

    With ``deterministic`` the posterior noise z is zero at every step.
    """
    x = rng.standard_normal(shape) if x_start is None else np.array(x_start, dtype=np.float64)
    for t in range(sched.steps, 0, -1):
        alpha, beta, ab = sched.alpha_at(t), sched.beta_at(t), sched.alpha_bar_at(t)
        eps = _call_eps(eps_fn, x, t)
        mean = (x - (beta / np.sqrt(1.0 - ab)) * eps) / np.sqrt(alpha)
        if t > 1 and not deterministic:
            var = beta * (1.0 - sched.alpha_bar_at(t - 1)) / (1.0 - ab)
            x = mean + np.sqrt(var) * rng.standard_normal(shape)
        else:
            x = mean
        _check_finite(x, t)
    return x


def ddim_timesteps(total: int, steps: int) -> list[int]:
    """Descending, uniformly strided timesteps ending at 1."""
    if not 1 <= steps <= total:
        raise ConfigurationError(
            f"sampler steps must be in [1, {total}]", steps=steps, total=total
        )
    if steps == 1:
        return [total]
    return [int(t) for t in np.round(np.linspace(total, 1, steps)).astype(int)]


def ddim_chain(
    eps_fn: EpsFn,
    shape: tuple[int, ...],
    sched: NoiseSchedule,
    steps: int,
    rng: np.random.Generator,
    eta: float = 0.0,
    x_start: np.ndarray | None = None,
) -> np.ndarray:
    """
    DDIM chain over ``ddim_timesteps``; returns the unclipped x_0.

    ``eta = 0`` is fully deterministic after the initial draw; ``eta = 1``
    restores ancestral-level noise on the strided grid.
    """
    x = rng.standard_normal(shape) if x_start is None else np.array(x_start, dtype=np.float64)
    grid = ddim_timesteps(sched.steps, steps)
    for i, t in enumerate(grid):
        t_prev = grid[i + 1] if i + 1 < len(grid) else 0
        ab, ab_prev = sched.alpha_bar_at(t), sched.alpha_bar_at(t_prev)
        eps = _call_eps(eps_fn, x, t)
        x0_pred = (x - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        sigma = 0.0
        if eta > 0 and t_prev > 0:
            sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev))
        x = np.sqrt(ab_prev) * x0_pred + np.sqrt(1.0 - ab_prev - sigma**2) * eps
        if sigma > 0:
            x = x + sigma * rng.standard_normal(shape)
        _check_finite(x, t)
    return x


@dataclass
class SamplerRequest:
    """Everything a sampler needs besides the chain itself."""
    refs: ReferencePatchSet
    target: PatchIndex
    params: DenoiserParams
    sched: NoiseSchedule
    forecast_steps: int | None = None
    variant: SpenVariant | None = None


def _denoiser_eps(request: SamplerRequest) -> EpsFn:
    # Reference encodings do not depend on x_t; encode once per chain.
    context = merge_tokens(encode_references(request.refs, request.params))

    def eps_fn(x: np.ndarray, t: int) -> np.ndarray:
        return denoise_patch(
            x,
            t,
            context,
            request.params,
            position=request.target.linear_id,
            variant=request.variant,
        ).data

    return eps_fn


def _target_shape(request: SamplerRequest) -> tuple[int, int, int]:
    _, height, width, _ = request.refs.patches.shape
    m = request.forecast_steps or request.params.config.forecast_steps
    return height, width, m


def _finish(x0: np.ndarray, index: PatchIndex, decode: DecodeFn | None = None) -> TargetPatch:
    if decode is not None:
        x0 = decode(x0)
    logger.debug(
        "Sampled target patch",
        cell=list(index.cell),
        clipped=int(np.count_nonzero((x0 < 0.0) | (x0 > 1.0))),
    )
    return TargetPatch(values=np.clip(x0, 0.0, 1.0)[None], index=index)


def sample_ddpm(
    refs: ReferencePatchSet,
    params: DenoiserParams,
    sched: NoiseSchedule,
    variant: SpenVariant | None = None,
    seed: int = 0,
    *,
    target: PatchIndex | None = None,
    forecast_steps: int | None = None,
    eps_fn: EpsFn | None = None,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
    decode: DecodeFn | None = None,
) -> TargetPatch:
    """
    Ancestral sampling of one target patch [1 x H x W x M].

    ``target`` defaults to the center of the reference set. ``eps_fn``
    replaces the denoiser (oracle checks). An explicit ``rng`` overrides
    the stream derived from ``seed``.
    """
    request = SamplerRequest(
        refs=refs,
        target=target or refs.indices[0],
        params=params,
        sched=sched,
        forecast_steps=forecast_steps,
        variant=variant,
    )
    with no_grad():
        fn = eps_fn or _denoiser_eps(request)
        x0 = ddpm_chain(
            fn, _target_shape(request), sched, rng or derive_rng(seed, "ddpm"), deterministic
        )
    return _finish(x0, request.target, decode)


def sample_ddim(
    refs: ReferencePatchSet,
    params: DenoiserParams,
    sched: NoiseSchedule,
    variant: SpenVariant | None = None,
    steps: int = 20,
    seed: int = 0,
    *,
    target: PatchIndex | None = None,
    forecast_steps: int | None = None,
    eps_fn: EpsFn | None = None,
    rng: np.random.Generator | None = None,
    eta: float = 0.0,
    decode: DecodeFn | None = None,
) -> TargetPatch:
    """Deterministic DDIM sampling of one target patch [1 x H x W x M]."""
    request = SamplerRequest(
        refs=refs,
        target=target or refs.indices[0],
        params=params,
        sched=sched,
        forecast_steps=forecast_steps,
        variant=variant,
    )
    with no_grad():
        fn = eps_fn or _denoiser_eps(request)
        x0 = ddim_chain(
            fn, _target_shape(request), sched, steps, rng or derive_rng(seed, "ddim"), eta
        )
    return _finish(x0, request.target, decode)


SAMPLER_REGISTRY: dict[str, Callable[..., TargetPatch]] = {
    "ddpm": sample_ddpm,
    "ddim": sample_ddim,
}


def get_sampler(name: str) -> Callable[..., TargetPatch]:
    """Look up a sampler by name."""
    if name not in SAMPLER_REGISTRY:
        raise ConfigurationError(f"Unknown sampler {name!r}", allowed=sorted(SAMPLER_REGISTRY))
    return SAMPLER_REGISTRY[name]
