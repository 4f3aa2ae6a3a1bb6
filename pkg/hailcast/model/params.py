"""
Denoiser Parameters

Named parameter registry for the denoiser, seeded initialization and the
checkpoint directory layout:

    <ckpt>/manifest.json            # config, variant, schedule, seed, step
    <ckpt>/params/<name>.fgt        # one FGT1 file per parameter

Parameter names are dotted paths such as ``blocks.0.self.wq``.
"""

import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import orjson
import structlog

from hailcast.config import Settings
from hailcast.core.errors import ConfigurationError, EvaluationError
from hailcast.core.rng import derive_rng
from hailcast.core.tensor_io import read_array, write_array
from hailcast.model.coding import TargetCoding
from hailcast.model.spen import DEFAULT_CAPACITY, SpenVariant, check_width
from hailcast.numeric.tensor import Tensor
from hailcast.patches.grid import REFERENCE_MODES

logger = structlog.get_logger(__name__)

MANIFEST = "manifest.json"
PARAMS_DIR = "params"
FF_MULT = 4
KERNEL = 3


@dataclass(frozen=True)
class DenoiserConfig:
    """Architecture and geometry of one denoiser instance."""
    patch: int = 16
    token_patch: int = 4
    d_model: int = 64
    n_blocks: int = 4
    n_heads: int = 4
    history_steps: int = 5
    forecast_steps: int = 5
    variant: SpenVariant = SpenVariant.FULL
    pos_capacity: int = DEFAULT_CAPACITY
    time_capacity: int = DEFAULT_CAPACITY
    reference_mode: str = "neighborhood"
    target_anchor: str = "none"
    residual_scale: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", SpenVariant(self.variant))
        if self.reference_mode not in REFERENCE_MODES:
            raise ConfigurationError(
                f"Unknown reference mode {self.reference_mode!r}", allowed=list(REFERENCE_MODES)
            )
        check_width(self.d_model)
        if self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model {self.d_model} must be divisible by n_heads {self.n_heads}"
            )
        if self.patch % self.token_patch:
            raise ConfigurationError(
                f"token_patch {self.token_patch} must divide patch {self.patch}"
            )
        if self.encoded_extent < 1 or math.ceil(self.patch / 2) < KERNEL:
            raise ConfigurationError(
                f"patch {self.patch} too small for the reference encoder", patch=self.patch
            )
        self.coding  # raises on an unknown anchor or a non-positive scale
        if self.history_steps + self.forecast_steps > self.time_capacity:
            raise ConfigurationError(
                "history_steps + forecast_steps exceeds the time capacity",
                capacity=self.time_capacity,
            )

    @property
    def coding(self) -> TargetCoding:
        return TargetCoding(self.target_anchor, self.residual_scale)

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def raw_dim(self) -> int:
        """Values per tokenized block (p squared)."""
        return self.token_patch**2

    @property
    def tokens_per_step(self) -> int:
        return (self.patch // self.token_patch) ** 2

    @property
    def encoded_extent(self) -> int:
        """Side of a reference feature map after two stride-2 convolutions."""
        return math.ceil(math.ceil(self.patch / 2) / 2)

    @classmethod
    def from_settings(cls, settings: Settings) -> "DenoiserConfig":
        return cls(
            patch=settings.patch,
            token_patch=settings.token_patch,
            d_model=settings.d_model,
            n_blocks=settings.n_blocks,
            n_heads=settings.n_heads,
            history_steps=settings.history_steps,
            forecast_steps=settings.forecast_steps,
            variant=SpenVariant(settings.variant),
            pos_capacity=settings.position_capacity,
            time_capacity=settings.spen_capacity,
            reference_mode=settings.reference_mode,
            target_anchor=settings.target_anchor,
            residual_scale=settings.residual_scale,
        )

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["variant"] = self.variant.value
        return data


@dataclass
class DenoiserParams:
    """Configuration plus named parameter tensors."""
    config: DenoiserConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        try:
            return self.tensors[name]
        except KeyError:
            raise ConfigurationError(f"Unknown parameter {name!r}") from None

    def __iter__(self) -> Iterator[str]:
        return iter(self.tensors)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self.tensors.items())

    @property
    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}


def parameter_shapes(config: DenoiserConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter name with its shape, in registration order."""
    d, raw, half = config.d_model, config.raw_dim, config.d_model // 2
    shapes: dict[str, tuple[int, ...]] = {
        "tok_in.w": (raw, d),
        "tok_in.b": (d,),
        "enc.conv1.w": (half, 1, KERNEL, KERNEL),
        "enc.conv1.b": (half,),
        "enc.conv2.w": (d, half, KERNEL, KERNEL),
        "enc.conv2.b": (d,),
        "temb.w": (d, d),
        "temb.b": (d,),
    }
    for i in range(config.n_blocks):
        prefix = f"blocks.{i}"
        for ln in ("ln1", "ln2", "ln3"):
            shapes[f"{prefix}.{ln}.g"] = (d,)
            shapes[f"{prefix}.{ln}.b"] = (d,)
        for attn in ("self", "cross"):
            for proj in ("wq", "wk", "wv", "wo"):
                shapes[f"{prefix}.{attn}.{proj}"] = (d, d)
        shapes[f"{prefix}.ff.w1"] = (d, FF_MULT * d)
        shapes[f"{prefix}.ff.b1"] = (FF_MULT * d,)
        shapes[f"{prefix}.ff.w2"] = (FF_MULT * d, d)
        shapes[f"{prefix}.ff.b2"] = (d,)
    shapes["tok_out.w"] = (d, raw)
    shapes["tok_out.b"] = (raw,)
    return shapes


def _is_output_projection(name: str) -> bool:
    return name.endswith((".wo", ".ff.w2"))


def init_params(
    config: DenoiserConfig,
    seed: int = 0,
    zero_init_outputs: bool = True,
) -> DenoiserParams:
    """
    Seeded initialization.

    Weights draw from N(0, 1/fan_in); biases start at zero and layer-norm
    gains at one. Attention and feed-forward output projections start at
    zero unless ``zero_init_outputs`` is False, so every block begins as
    the identity on its residual stream.
    """
    rng = derive_rng(seed, "init")
    tensors: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".g"):
            data = np.ones(shape)
        elif len(shape) == 1 or (zero_init_outputs and _is_output_projection(name)):
            data = np.zeros(shape)
        else:
            fan_in = math.prod(shape[1:]) if len(shape) == 4 else shape[0]
            data = rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)

    params = DenoiserParams(config=config, tensors=tensors)
    logger.info(
        "Denoiser initialized",
        parameters=params.count,
        tensors=len(tensors),
        variant=config.variant.value,
        seed=seed,
    )
    return params


def save_checkpoint(
    path: str | Path,
    params: DenoiserParams,
    **metadata: Any,
) -> Path:
    """
    Write a checkpoint directory.

    ``metadata`` (schedule, seed, step, reference count ...) is stored in
    the manifest next to the architecture config.
    """
    root = Path(path)
    for name, tensor in params.items():
        write_array(root / PARAMS_DIR / f"{name}.fgt", tensor.data)
    manifest = {
        "config": params.config.to_dict(),
        "variant": params.config.variant.value,
        "parameters": list(params.tensors),
        "parameter_count": params.count,
        **metadata,
    }
    (root / MANIFEST).write_bytes(
        orjson.dumps(manifest, option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS)
    )
    logger.info("Checkpoint written", path=str(root), step=metadata.get("step"))
    return root


def load_checkpoint(path: str | Path) -> tuple[DenoiserParams, dict[str, Any]]:
    """Read a checkpoint directory back into parameters plus its manifest."""
    root = Path(path)
    manifest_path = root / MANIFEST
    if not manifest_path.exists():
        raise EvaluationError(
            f"No checkpoint manifest at {manifest_path}", missing=[str(manifest_path)]
        )
    manifest = orjson.loads(manifest_path.read_bytes())
    config = DenoiserConfig(**manifest["config"])

    expected = parameter_shapes(config)
    missing = [
        str(root / PARAMS_DIR / f"{name}.fgt")
        for name in expected
        if not (root / PARAMS_DIR / f"{name}.fgt").exists()
    ]
    if missing:
        raise EvaluationError("Checkpoint is missing parameter files", missing=missing)

    tensors = {}
    for name, shape in expected.items():
        data = read_array(root / PARAMS_DIR / f"{name}.fgt")
        if data.shape != shape:
            raise ConfigurationError(
                f"Parameter {name!r} has shape {data.shape}, expected {shape}"
            )
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    return DenoiserParams(config=config, tensors=tensors), manifest
