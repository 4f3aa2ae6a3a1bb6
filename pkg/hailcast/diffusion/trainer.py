"""
Trainer

Epsilon-prediction training of the denoiser with AdamW.

Each training sample is one target patch drawn uniformly from the patch
grid of a training window, conditioned on its reference set. Per-sample
randomness (diffusion step and noise) comes from its own stream keyed by
(step, window, slot), so a run is reproducible from its seed alone.
"""

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog

from hailcast.config import Settings
from hailcast.core.errors import DivergenceError, EmptyResultError, NonFiniteError
from hailcast.core.rng import derive_rng
from hailcast.diffusion.schedule import NoiseSchedule, forward_noise, schedule_from_settings
from hailcast.model.denoiser import denoise_patch, encode_references, merge_tokens
from hailcast.model.coding import TargetCoding, last_patch_frame
from hailcast.model.params import DenoiserConfig, DenoiserParams, init_params, save_checkpoint
from hailcast.model.spen import SpenVariant
from hailcast.numeric import ops
from hailcast.numeric.tensor import Tensor, is_grad_enabled, no_grad
from hailcast.patches.grid import (
    PatchIndex,
    ReferencePatchSet,
    TargetPatch,
    patch_histories,
    reference_set,
)
from hailcast.radar.dataset import RadarDataset, Window

logger = structlog.get_logger(__name__)

TRAIN_LOG = "train_log.json"
CHECKPOINTS_DIR = "checkpoints"
FINAL_CHECKPOINT = "checkpoint"


@dataclass
class TrainingSample:
    """
    A reference set, its target patch and the sample's RNG stream.

    ``x0`` is the diffused quantity, the target after its coding; it
    defaults to the raw target values.
    """
    refs: ReferencePatchSet
    target: TargetPatch
    rng: np.random.Generator
    window_id: int = 0
    x0: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.x0 is None:
            self.x0 = self.target.values[0]


@dataclass
class LossResult:
    """Batch loss with the draws that produced it and the gradients."""
    value: float
    timesteps: list[int]
    grads: dict[str, np.ndarray] = field(default_factory=dict)


PredictFn = Callable[[np.ndarray, int, TrainingSample], Tensor]


# === Samples ===


def make_sample(
    window: Window,
    cell: PatchIndex,
    grid: tuple[int, int],
    patch: int,
    mode: str,
    rng: np.random.Generator,
    window_id: int = 0,
    coding: TargetCoding | None = None,
) -> TrainingSample:
    """Cut the target tile and its reference set out of a window."""
    refs = reference_set(mode, cell, grid, patch_histories(window.history, patch))
    r, c = cell.cell
    future = window.future[:, r * patch : (r + 1) * patch, c * patch : (c + 1) * patch]
    target = TargetPatch(values=np.ascontiguousarray(future.transpose(1, 2, 0))[None], index=cell)
    x0 = None
    if coding is not None:
        x0 = coding.encode(target.values[0], last_patch_frame(window.history, r, c, patch))
    return TrainingSample(refs=refs, target=target, rng=rng, window_id=window_id, x0=x0)


def draw_batch(
    dataset: RadarDataset,
    ids: Sequence[int],
    settings: Settings,
    step: int,
) -> list[TrainingSample]:
    """Draw ``batch_size`` samples for one optimizer step."""
    rows, cols = settings.grid_shape
    picker = derive_rng(settings.seed, "train", step)
    coding = TargetCoding(settings.target_anchor, settings.residual_scale)
    batch = []
    for slot in range(settings.batch_size):
        wid = int(ids[int(picker.integers(len(ids)))])
        cell = PatchIndex.at(int(picker.integers(rows)), int(picker.integers(cols)), cols)
        batch.append(
            make_sample(
                dataset.window(wid),
                cell,
                (rows, cols),
                settings.patch,
                settings.reference_mode,
                derive_rng(settings.seed, "train", step, wid, slot),
                window_id=wid,
                coding=coding,
            )
        )
    return batch


@dataclass(frozen=True)
class ValidationSpec:
    """Fixed (window, cell) pair re-evaluated with the same draws every time."""
    window_id: int
    cell: PatchIndex
    slot: int


def validation_specs(dataset: RadarDataset, settings: Settings) -> list[ValidationSpec]:
    ids = dataset.ids("val") or dataset.ids("train")
    rows, cols = settings.grid_shape
    picker = derive_rng(settings.seed, "val")
    specs = []
    for slot in range(settings.val_samples):
        wid = int(ids[int(picker.integers(len(ids)))])
        cell = PatchIndex.at(int(picker.integers(rows)), int(picker.integers(cols)), cols)
        specs.append(ValidationSpec(window_id=wid, cell=cell, slot=slot))
    return specs


# === Loss ===


def _model_predict(params: DenoiserParams, variant: SpenVariant | None) -> PredictFn:
    def predict(x_t: np.ndarray, t: int, sample: TrainingSample) -> Tensor:
        context = merge_tokens(encode_references(sample.refs, params))
        return denoise_patch(
            x_t, t, context, params, position=sample.target.index.linear_id, variant=variant
        )

    return predict


def training_loss(
    batch: Sequence[TrainingSample],
    params: DenoiserParams | None,
    sched: NoiseSchedule,
    variant: SpenVariant | None = None,
    *,
    predict: PredictFn | None = None,
    step: int = 0,
) -> LossResult:
    """
    Mean squared error between drawn and predicted noise.

    Per sample: t ~ U{1..T_diff}, eps ~ N(0, I) from the sample's stream,
    x_t = forward_noise(target, t, eps). When graph recording is on, the
    loss is backpropagated and the gradients returned.

    Raises:
        EmptyResultError: empty batch
        DivergenceError: non-finite loss (carries ``step``)
    """
    if not batch:
        raise EmptyResultError("training batch is empty")
    if params is None and predict is None:
        raise EmptyResultError("either params or a predict function is required")
    predict = predict or _model_predict(params, variant)
    recording = is_grad_enabled() and params is not None
    if recording:
        params.zero_grad()

    timesteps = []
    total: Tensor | None = None
    try:
        for sample in batch:
            x0 = sample.x0
            t = int(sample.rng.integers(1, sched.steps + 1))
            eps = sample.rng.standard_normal(x0.shape)
            pred = predict(forward_noise(x0, t, eps, sched), t, sample)
            term = ops.mse(pred, eps)
            total = term if total is None else ops.add(total, term)
            timesteps.append(t)
        loss = ops.mul(total, 1.0 / len(batch))
    except NonFiniteError as e:
        raise DivergenceError("loss became non-finite", step=step) from e

    value = loss.item()
    if not np.isfinite(value):
        raise DivergenceError("loss became non-finite", step=step)

    grads: dict[str, np.ndarray] = {}
    if recording and loss.requires_grad:
        loss.backward()
        grads = {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()
        }
    return LossResult(value=value, timesteps=timesteps, grads=grads)


# === Optimizer ===


class AdamW:
    """
    Adam with decoupled weight decay.

    Decay applies to weight matrices and kernels only; biases and
    layer-norm parameters are not decayed.
    """

    def __init__(
        self,
        params: DenoiserParams,
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    @classmethod
    def from_settings(cls, params: DenoiserParams, settings: Settings) -> "AdamW":
        return cls(
            params,
            lr=settings.lr,
            betas=(settings.adam_beta1, settings.adam_beta2),
            eps=settings.adam_eps,
            weight_decay=settings.weight_decay,
        )

    def step(self) -> None:
        """Apply one update from the gradients currently on the parameters."""
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update


@dataclass
class TrainState:
    """Parameters, optimizer moments, step counter and loss history."""
    params: DenoiserParams
    optimizer: AdamW
    step: int = 0
    rng_seed: int = 0
    loss_history: list[dict[str, float]] = field(default_factory=list)
    val_history: list[dict[str, float]] = field(default_factory=list)

    @classmethod
    def from_settings(cls, settings: Settings) -> "TrainState":
        params = init_params(DenoiserConfig.from_settings(settings), seed=settings.seed)
        return cls(
            params=params,
            optimizer=AdamW.from_settings(params, settings),
            rng_seed=settings.seed,
        )


def validation_loss(
    state: TrainState,
    specs: Sequence[ValidationSpec],
    dataset: RadarDataset,
    settings: Settings,
    sched: NoiseSchedule,
) -> float:
    """Epsilon loss on the fixed validation samples (no graph recorded)."""
    grid = settings.grid_shape
    batch = [
        make_sample(
            dataset.window(spec.window_id),
            spec.cell,
            grid,
            settings.patch,
            settings.reference_mode,
            derive_rng(settings.seed, "val", spec.window_id, spec.cell.linear_id, spec.slot),
            window_id=spec.window_id,
            coding=state.params.config.coding,
        )
        for spec in specs
    ]
    with no_grad():
        return training_loss(batch, state.params, sched, step=state.step).value


def _checkpoint_metadata(state: TrainState, settings: Settings, sched: NoiseSchedule) -> dict[str, Any]:
    return {
        "step": state.step,
        "seed": settings.seed,
        "schedule": sched.to_dict(),
        "reference_mode": settings.reference_mode,
        "history_steps": settings.history_steps,
        "forecast_steps": settings.forecast_steps,
    }


def train(
    state: TrainState,
    dataset: RadarDataset,
    settings: Settings,
    out_dir: str | Path | None = None,
    sched: NoiseSchedule | None = None,
) -> TrainState:
    """
    Run AdamW until ``settings.train_steps``.

    Writes ``checkpoints/step_XXXXXX`` every ``ckpt_every`` steps, the final
    ``checkpoint`` directory and ``train_log.json`` when ``out_dir`` is
    given. Validation loss is recorded at step 0, every ``eval_every``
    steps and at the end.
    """
    ids = dataset.ids("train")
    if not ids:
        raise EmptyResultError("training split is empty")
    sched = sched or schedule_from_settings(settings)
    out = Path(out_dir) if out_dir is not None else None
    specs = validation_specs(dataset, settings)

    def record_validation() -> None:
        value = validation_loss(state, specs, dataset, settings, sched)
        state.val_history.append({"step": state.step, "loss": value})
        logger.info("Validation loss", step=state.step, val_loss=value)

    if state.step == 0:
        record_validation()

    logger.info(
        "Training started",
        steps=settings.train_steps,
        batch_size=settings.batch_size,
        lr=settings.lr,
        variant=state.params.config.variant.value,
        train_windows=len(ids),
    )
    while state.step < settings.train_steps:
        batch = draw_batch(dataset, ids, settings, state.step)
        result = training_loss(batch, state.params, sched, step=state.step)
        state.optimizer.step()
        state.step += 1
        state.loss_history.append({"step": state.step, "loss": result.value})

        if state.step % settings.log_every == 0:
            logger.info("Training step", step=state.step, loss=result.value)
        if state.step % settings.eval_every == 0 or state.step == settings.train_steps:
            record_validation()
        if out is not None and state.step % settings.ckpt_every == 0:
            save_checkpoint(
                out / CHECKPOINTS_DIR / f"step_{state.step:06d}",
                state.params,
                **_checkpoint_metadata(state, settings, sched),
            )

    if out is not None:
        save_checkpoint(
            out / FINAL_CHECKPOINT, state.params, **_checkpoint_metadata(state, settings, sched)
        )
        write_train_log(out / TRAIN_LOG, state)
    logger.info("Training finished", step=state.step)
    return state


def write_train_log(path: Path, state: TrainState) -> None:
    log = {
        "variant": state.params.config.variant.value,
        "seed": state.rng_seed,
        "steps": state.step,
        "loss": state.loss_history,
        "val_loss": state.val_history,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(log, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS))
