"""
hailcast Configuration Module

Centralized run configuration using Pydantic Settings for typed,
validated knobs. One Settings instance fully describes a run; it is
serialized to ``config.json`` next to every output so the run can be
reproduced from that file alone.

Precedence: CLI flag > --config file > HAILCAST_* environment > default.
"""

from pathlib import Path
from typing import Any, Literal

import orjson
from pydantic import Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

SpenVariantName = Literal["noembd", "timeembd", "spen"]


class Settings(BaseSettings):
    """
    Run settings loaded from init kwargs, environment and defaults.

    All cross-field constraints are validated on construction so a bad
    geometry fails before any data is generated.
    """

    model_config = SettingsConfigDict(
        env_prefix="HAILCAST_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    # === Core ===
    seed: int = Field(default=0, ge=0)
    out_dir: Path = Path("runs/default")
    data_dir: Path | None = None
    log_level: Literal["DEBUG", "INFO", "WARNING", "ERROR"] = "INFO"
    log_format: Literal["json", "console"] = "json"
    precision: Literal["float64", "float32"] = "float64"
    workers: int = Field(default=1, ge=1)

    # === Synthetic radar ===
    height: int = Field(default=64, ge=32)
    width: int = Field(default=64, ge=32)
    frames: int = Field(default=50, ge=1)
    n_sequences: int = Field(default=40, ge=1)
    n_cells: int = Field(default=6, ge=0)
    noise_std: float = Field(default=0.01, ge=0.0)
    frame_interval_minutes: float = Field(default=6.0, gt=0)
    max_speed: float = Field(default=1.5, ge=0.0)

    # === Windows & splits ===
    history_steps: int = Field(default=5, ge=1)
    forecast_steps: int = Field(default=5, ge=1)
    window_stride: int | None = Field(default=None, ge=1)
    split_ratios: tuple[float, float, float] = (0.64, 0.16, 0.20)

    # === Patch grid ===
    patch: int = Field(default=16, ge=4)
    reference_mode: Literal["neighborhood", "full_grid"] = "neighborhood"

    # === Denoiser ===
    variant: SpenVariantName = "spen"
    d_model: int = Field(default=64, ge=16)
    token_patch: int = Field(default=4, ge=1)
    n_blocks: int = Field(default=4, ge=1)
    n_heads: int = Field(default=4, ge=1)
    spen_capacity: int = Field(default=16, ge=2, le=65536)

    # === Diffusion ===
    # The 1000-step DDPM betas (1e-4 .. 0.02) rescaled to 200 steps, so
    # alpha_bar at the last step is about 3e-5 and the chain can start
    # from N(0, I).
    diffusion_steps: int = Field(default=200, ge=2)
    beta_start: float = Field(default=5e-4, gt=0, lt=1)
    beta_end: float = Field(default=0.1, gt=0, lt=1)
    target_anchor: Literal["persistence", "none"] = "persistence"
    residual_scale: float = Field(default=0.1, gt=0)

    # === Optimizer / training ===
    train_steps: int = Field(default=2000, ge=0)
    batch_size: int = Field(default=4, ge=1)
    lr: float = Field(default=1e-4, ge=0)
    weight_decay: float = Field(default=0.01, ge=0)
    adam_beta1: float = Field(default=0.9, ge=0, lt=1)
    adam_beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_eps: float = Field(default=1e-8, gt=0)
    ckpt_every: int = Field(default=500, ge=1)
    eval_every: int = Field(default=250, ge=1)
    log_every: int = Field(default=50, ge=1)
    val_samples: int = Field(default=16, ge=1)

    # === Inference ===
    sampler: Literal["ddpm", "ddim"] = "ddim"
    sampler_steps: int = Field(default=20, ge=1)
    ensemble_size: int = Field(default=1, ge=1)
    checkpoint: Path | None = None

    # === Verification ===
    threshold: float = Field(default=0.5, gt=0, lt=1)
    target_tolerance: float | None = Field(default=None, gt=0)

    @field_validator("split_ratios")
    @classmethod
    def validate_split_ratios(cls, v: tuple[float, float, float]) -> tuple[float, float, float]:
        """Ratios must be nonnegative and sum to 1."""
        if any(r < 0 for r in v) or abs(sum(v) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be nonnegative and sum to 1, got {v}")
        return v

    @model_validator(mode="after")
    def validate_geometry(self) -> "Settings":
        """Cross-field constraints on geometry, model and schedule."""
        if self.frames < self.history_steps + self.forecast_steps:
            raise ValueError(
                f"insufficient frames: {self.frames} frames cannot hold a window of "
                f"{self.history_steps} + {self.forecast_steps}"
            )
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(
                f"patch ({self.patch}) must divide height ({self.height}) and width ({self.width})"
            )
        if self.patch % self.token_patch:
            raise ValueError(
                f"token_patch ({self.token_patch}) must divide patch ({self.patch})"
            )
        if self.d_model % 16:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by 16")
        if self.d_model % self.n_heads:
            raise ValueError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if self.beta_start > self.beta_end:
            raise ValueError("beta_start must not exceed beta_end")
        if self.history_steps + self.forecast_steps > self.spen_capacity:
            raise ValueError("history_steps + forecast_steps exceeds spen_capacity")
        return self

    # === Derived ===

    @property
    def window_length(self) -> int:
        return self.history_steps + self.forecast_steps

    @property
    def effective_stride(self) -> int:
        """Window stride; defaults to non-overlapping windows."""
        return self.window_stride or self.window_length

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.height // self.patch, self.width // self.patch

    @property
    def position_capacity(self) -> int:
        rows, cols = self.grid_shape
        return max(self.spen_capacity, rows * cols)

    @property
    def dataset_dir(self) -> Path:
        return self.data_dir or self.out_dir / "data"

    def to_json_bytes(self) -> bytes:
        return orjson.dumps(
            self.model_dump(mode="json"),
            option=orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS,
        )

    def save(self, path: str | Path) -> None:
        """Snapshot the resolved settings as JSON."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_json_bytes())

    @classmethod
    def load(cls, path: str | Path, **overrides: Any) -> "Settings":
        """Load a snapshot; explicit overrides win over file values."""
        values = orjson.loads(Path(path).read_bytes())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)
