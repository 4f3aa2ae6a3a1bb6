"""
Denoiser

Conditional noise-prediction network.

Flow for one target patch x_t [H x W x M]:
1. Space-to-depth tokens (p x p blocks per time step) -> linear map to d
2. Add a projected sinusoidal embedding of the diffusion step
3. L blocks of
     LN -> self-attention over target tokens   -> residual
     LN -> cross-attention into reference tokens -> residual
     LN -> feed-forward (4d, gelu)             -> residual
4. Linear map d -> p^2 and depth-to-space back to [H x W x M]

Reference patches [T x H x W x N] go through two stride-2 3x3
convolutions (1 -> d/2 -> d, gelu between); every spatial cell of every
history step becomes one reference token.

Queries and keys are modulated by the spatiotemporal codes of their
tokens; values are not.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from hailcast.core.errors import ConfigurationError
from hailcast.model.params import DenoiserParams
from hailcast.model.spen import SpenVariant, apply_spen
from hailcast.numeric import ops
from hailcast.numeric.tensor import Tensor
from hailcast.patches.grid import ReferencePatchSet

TARGET = "target"
TIMESTEP_BASE = 10000.0


@dataclass
class TokenMatrix:
    """
    Token features with their per-token position and time indices.

    Attributes:
        tokens: [b x d] features
        pos_index: [b] patch linear ids
        time_index: [b] history/forecast step indices
        origin: "target" or "reference:<slot>"
    """
    tokens: Tensor
    pos_index: np.ndarray
    time_index: np.ndarray
    origin: str = TARGET

    def __post_init__(self) -> None:
        self.pos_index = np.asarray(self.pos_index, dtype=np.int64)
        self.time_index = np.asarray(self.time_index, dtype=np.int64)
        if self.tokens.ndim != 2:
            raise ConfigurationError("tokens must be [b x d]", shape=list(self.tokens.shape))
        b = self.tokens.shape[0]
        if self.pos_index.shape != (b,) or self.time_index.shape != (b,):
            raise ConfigurationError(
                "one position and one time index per token",
                tokens=b,
                pos=list(self.pos_index.shape),
                time=list(self.time_index.shape),
            )

    @property
    def n_tokens(self) -> int:
        return int(self.tokens.shape[0])

    @property
    def width(self) -> int:
        return int(self.tokens.shape[1])


def merge_tokens(matrices: Sequence[TokenMatrix], origin: str = "references") -> TokenMatrix:
    """Concatenate token matrices into one attention context."""
    if not matrices:
        raise ConfigurationError("at least one token matrix is required")
    if len(matrices) == 1:
        return matrices[0]
    return TokenMatrix(
        tokens=ops.concat([m.tokens for m in matrices], axis=0),
        pos_index=np.concatenate([m.pos_index for m in matrices]),
        time_index=np.concatenate([m.time_index for m in matrices]),
        origin=origin,
    )


# === Tokenization ===


def space_to_depth(x: np.ndarray, p: int) -> np.ndarray:
    """[H x W x M] -> [(M * h * w) x p^2], time-major then row-major blocks."""
    if x.ndim != 3:
        raise ConfigurationError("expected an [H x W x M] patch", shape=list(x.shape))
    height, width, m = x.shape
    if p < 1 or height % p or width % p:
        raise ConfigurationError(f"token patch {p} must divide {height}x{width}")
    h, w = height // p, width // p
    blocks = x.transpose(2, 0, 1).reshape(m, h, p, w, p).transpose(0, 1, 3, 2, 4)
    return np.ascontiguousarray(blocks).reshape(m * h * w, p * p)


def depth_to_space(raw: Tensor, height: int, width: int, m: int, p: int) -> Tensor:
    """Differentiable inverse of ``space_to_depth``; returns [H x W x M]."""
    h, w = height // p, width // p
    blocks = ops.reshape(raw, (m, h, w, p, p))
    frames = ops.reshape(ops.permute(blocks, (0, 1, 3, 2, 4)), (m, height, width))
    return ops.permute(frames, (1, 2, 0))


def tokenize_target(
    x: np.ndarray | Tensor,
    p: int,
    params: DenoiserParams,
    *,
    position: int = 0,
    time_offset: int = 0,
) -> TokenMatrix:
    """
    Tokenize a target patch [H x W x M].

    Every token carries the target patch's grid position; time indices
    run ``time_offset .. time_offset + M - 1``.
    """
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    raw = space_to_depth(data, p)
    m = data.shape[2]
    per_step = raw.shape[0] // m
    tokens = ops.add(ops.matmul(Tensor(raw), params["tok_in.w"]), params["tok_in.b"])
    return TokenMatrix(
        tokens=tokens,
        pos_index=np.full(raw.shape[0], position),
        time_index=np.repeat(np.arange(time_offset, time_offset + m), per_step),
        origin=TARGET,
    )


def untokenize(tokens: Tensor, params: DenoiserParams, height: int, width: int, m: int) -> Tensor:
    """Project d -> p^2 and invert space-to-depth."""
    p = params.config.token_patch
    raw = ops.add(ops.matmul(tokens, params["tok_out.w"]), params["tok_out.b"])
    return depth_to_space(raw, height, width, m, p)


def encode_references(refs: ReferencePatchSet, params: DenoiserParams) -> list[TokenMatrix]:
    """
    Encode every reference patch into ``(h' * w') * N`` tokens.

    All T * N history frames run through the convolution stack as one
    batch.
    """
    t, height, width, n = refs.patches.shape
    frames = refs.patches.transpose(0, 3, 1, 2).reshape(t * n, 1, height, width)
    x = Tensor(frames)
    h1 = ops.gelu(ops.conv2d(x, params["enc.conv1.w"], stride=2, bias=params["enc.conv1.b"]))
    h2 = ops.conv2d(h1, params["enc.conv2.w"], stride=2, bias=params["enc.conv2.b"])
    _, d, he, we = h2.shape
    cells = he * we
    # [T*N, d, h', w'] -> [T * N * h' * w', d], time-major within each patch.
    flat = ops.reshape(ops.permute(h2, (0, 2, 3, 1)), (t * n * cells, d))

    per_patch = n * cells
    time_index = np.repeat(np.arange(n), cells)
    matrices = []
    for slot, index in enumerate(refs.indices):
        matrices.append(
            TokenMatrix(
                tokens=ops.slice_rows(flat, slot * per_patch, (slot + 1) * per_patch),
                pos_index=np.full(per_patch, index.linear_id),
                time_index=time_index,
                origin=f"reference:{slot}",
            )
        )
    return matrices


# === Attention ===


def attention(
    queries: TokenMatrix,
    keys_values: TokenMatrix,
    params: DenoiserParams,
    prefix: str,
    variant: SpenVariant | None = None,
) -> Tensor:
    """
    Multi-head scaled dot-product attention.

    Q and K are SpEn-modulated after projection; V is not. Uses
    ``<prefix>.wq/wk/wv/wo``; self-attention when ``keys_values`` is the
    target matrix itself, cross-attention when it is the merged reference
    context.
    """
    cfg = params.config
    variant = SpenVariant(variant or cfg.variant)
    if queries.width != keys_values.width or queries.width != cfg.d_model:
        raise ConfigurationError(
            "attention width mismatch",
            queries=queries.width,
            keys_values=keys_values.width,
            d_model=cfg.d_model,
        )

    caps = (cfg.pos_capacity, cfg.time_capacity)
    q = apply_spen(
        ops.matmul(queries.tokens, params[f"{prefix}.wq"]),
        queries.pos_index,
        queries.time_index,
        variant,
        *caps,
    )
    k = apply_spen(
        ops.matmul(keys_values.tokens, params[f"{prefix}.wk"]),
        keys_values.pos_index,
        keys_values.time_index,
        variant,
        *caps,
    )
    v = ops.matmul(keys_values.tokens, params[f"{prefix}.wv"])

    hd = cfg.head_dim
    scale = 1.0 / math.sqrt(hd)
    heads = []
    for h in range(cfg.n_heads):
        lo, hi = h * hd, (h + 1) * hd
        if cfg.n_heads == 1:
            qh, kh, vh = q, k, v
        else:
            qh, kh, vh = ops.slice_cols(q, lo, hi), ops.slice_cols(k, lo, hi), ops.slice_cols(v, lo, hi)
        scores = ops.mul(ops.matmul(qh, ops.transpose(kh)), scale)
        heads.append(ops.matmul(ops.softmax_rows(scores), vh))
    merged = heads[0] if len(heads) == 1 else ops.concat(heads, axis=1)
    return ops.matmul(merged, params[f"{prefix}.wo"])


def timestep_embedding(t_diff: int, d: int) -> np.ndarray:
    """Sinusoidal embedding of the diffusion step, shape [1 x d]."""
    half = d // 2
    freqs = np.exp(-math.log(TIMESTEP_BASE) * np.arange(half, dtype=np.float64) / half)
    angles = float(t_diff) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)])[None, :]


def _layer_norm(h: Tensor, params: DenoiserParams, name: str) -> Tensor:
    return ops.layer_norm(h, params[f"{name}.g"], params[f"{name}.b"])


def predict_noise(
    x_t_tokens: TokenMatrix,
    t_diff: int,
    refs: TokenMatrix | Sequence[TokenMatrix],
    params: DenoiserParams,
    variant: SpenVariant | None = None,
) -> Tensor:
    """
    Noise estimate for a tokenized noisy target, shape [H x W x M].

    ``refs`` may be the per-patch list from ``encode_references`` or an
    already merged context (samplers merge once and reuse it).
    """
    cfg = params.config
    variant = SpenVariant(variant or cfg.variant)
    if t_diff < 1:
        raise ConfigurationError("diffusion step must be >= 1", t_diff=t_diff)
    context = refs if isinstance(refs, TokenMatrix) else merge_tokens(list(refs))

    temb = ops.add(
        ops.matmul(Tensor(timestep_embedding(t_diff, cfg.d_model)), params["temb.w"]),
        params["temb.b"],
    )
    h = ops.add(x_t_tokens.tokens, temb)

    for i in range(cfg.n_blocks):
        prefix = f"blocks.{i}"
        normed = replace(x_t_tokens, tokens=_layer_norm(h, params, f"{prefix}.ln1"))
        h = ops.add(h, attention(normed, normed, params, f"{prefix}.self", variant))

        normed = replace(x_t_tokens, tokens=_layer_norm(h, params, f"{prefix}.ln2"))
        h = ops.add(h, attention(normed, context, params, f"{prefix}.cross", variant))

        normed = _layer_norm(h, params, f"{prefix}.ln3")
        hidden = ops.gelu(ops.add(ops.matmul(normed, params[f"{prefix}.ff.w1"]), params[f"{prefix}.ff.b1"]))
        h = ops.add(h, ops.add(ops.matmul(hidden, params[f"{prefix}.ff.w2"]), params[f"{prefix}.ff.b2"]))

    side = cfg.patch
    m = x_t_tokens.n_tokens // cfg.tokens_per_step
    return untokenize(h, params, side, side, m)


def denoise_patch(
    x_t: np.ndarray,
    t_diff: int,
    context: TokenMatrix,
    params: DenoiserParams,
    *,
    position: int,
    variant: SpenVariant | None = None,
) -> Tensor:
    """
    Tokenize ``x_t`` [H x W x M] and predict its noise against ``context``.

    Forecast steps are indexed right after the last history step seen in
    the context.
    """
    cfg = params.config
    time_offset = int(context.time_index.max()) + 1
    tokens = tokenize_target(
        x_t, cfg.token_patch, params, position=position, time_offset=time_offset
    )
    return predict_noise(tokens, t_diff, context, params, variant)

