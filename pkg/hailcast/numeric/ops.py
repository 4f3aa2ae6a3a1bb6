"""
Differentiable primitives.

Provides:
- Elementwise add/sub/mul with the limited broadcasting the denoiser needs
- matmul, transpose, reshape, permute, concat, row and column slicing
- softmax_rows, layer_norm, gelu
- conv2d (same padding, zero fill, cross-correlation, strided)
- sum / mean reductions

All primitives are pure: reductions run in a fixed order, so identical
inputs give bit-identical outputs.
"""

import math
from collections.abc import Sequence

import numpy as np

from hailcast.core.errors import DimensionError
from hailcast.numeric.tensor import Tensor, as_tensor, get_dtype, make_result

LAYER_NORM_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` back down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as e:
        raise DimensionError(
            f"{op}: shapes {a.shape} and {b.shape} do not broadcast",
            left=list(a.shape),
            right=list(b.shape),
        ) from e


# === Elementwise ===


def add(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.shape))

    return make_result(a.data + b.data, (a, b), backward, "add")


def sub(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.shape))

    return make_result(a.data - b.data, (a, b), backward, "sub")


def mul(a: Tensor | float, b: Tensor | float) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make_result(a.data * b.data, (a, b), backward, "mul")


def gelu(x: Tensor) -> Tensor:
    """Tanh-approximated GELU (smooth, so finite differences behave)."""
    u = _GELU_C * (x.data + 0.044715 * x.data**3)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g: np.ndarray) -> None:
        du = _GELU_C * (1.0 + 3 * 0.044715 * x.data**2)
        local = 0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du
        x.accumulate(g * local)

    return make_result(out, (x,), backward, "gelu")


# === Linear algebra ===


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m x k] and b [k x n]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(
            f"matmul: cannot multiply {a.shape} by {b.shape}",
            left=list(a.shape),
            right=list(b.shape),
        )

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return make_result(a.data @ b.data, (a, b), backward, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise DimensionError("transpose expects a matrix", shape=list(a.shape))

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.T)

    return make_result(np.ascontiguousarray(a.data.T), (a,), backward, "transpose")


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != a.size:
        raise DimensionError(
            f"reshape: {a.shape} has {a.size} values, target {shape} needs {math.prod(shape)}",
        )

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.reshape(a.shape))

    return make_result(a.data.reshape(shape), (a,), backward, "reshape")


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of {a.ndim} axes")
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        a.accumulate(g.transpose(inverse))

    return make_result(
        np.ascontiguousarray(a.data.transpose(axes)), (a,), backward, "permute"
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    parts = tuple(tensors)
    ref = parts[0].shape
    for t in parts[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref, strict=True)) if i != axis
        ):
            raise DimensionError(
                f"concat: {t.shape} incompatible with {ref} along axis {axis}"
            )
    bounds = np.cumsum([0] + [t.shape[axis] for t in parts])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(parts, bounds[:-1], bounds[1:], strict=True):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(int(lo), int(hi))
                t.accumulate(g[tuple(index)])

    return make_result(
        np.concatenate([t.data for t in parts], axis=axis), parts, backward, "concat"
    )


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) of a matrix (attention head split)."""
    if a.ndim != 2 or not 0 <= start < stop <= a.shape[1]:
        raise DimensionError(f"slice_cols: [{start}, {stop}) invalid for {a.shape}")

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a.accumulate(full)

    return make_result(
        np.ascontiguousarray(a.data[:, start:stop]), (a,), backward, "slice_cols"
    )


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Rows [start, stop) along the leading axis."""
    if a.ndim < 1 or not 0 <= start < stop <= a.shape[0]:
        raise DimensionError(f"slice_rows: [{start}, {stop}) invalid for {a.shape}")

    def backward(g: np.ndarray) -> None:
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a.accumulate(full)

    return make_result(
        np.ascontiguousarray(a.data[start:stop]), (a,), backward, "slice_rows"
    )


# === Reductions ===


def sum_all(a: Tensor) -> Tensor:
    def backward(g: np.ndarray) -> None:
        a.accumulate(np.broadcast_to(g, a.shape))

    return make_result(np.asarray(a.data.sum()), (a,), backward, "sum")


def mean_all(a: Tensor) -> Tensor:
    n = max(a.size, 1)

    def backward(g: np.ndarray) -> None:
        a.accumulate(np.broadcast_to(g / n, a.shape))

    return make_result(np.asarray(a.data.mean()), (a,), backward, "mean")


def mse(pred: Tensor, target: Tensor | np.ndarray) -> Tensor:
    """Mean of squared differences, the epsilon-prediction objective."""
    diff = sub(pred, as_tensor(target))
    return mean_all(mul(diff, diff))


# === Normalisation / attention ===


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilised by subtracting each row's maximum."""
    if a.ndim != 2:
        raise DimensionError("softmax_rows expects a matrix", shape=list(a.shape))
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        a.accumulate(y * (g - (g * y).sum(axis=1, keepdims=True)))

    return make_result(y, (a,), backward, "softmax_rows")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """
    Per-row standardisation followed by an affine map.

    Uses population variance with epsilon 1e-5 inside the square root.
    """
    if x.ndim != 2 or x.shape[1] < 2:
        raise DimensionError("layer_norm expects [b x d] with d >= 2", shape=list(x.shape))
    d = x.shape[1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError(
            f"layer_norm: gain/bias must be ({d},)",
            gain=list(gain.shape),
            bias=list(bias.shape),
        )
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g: np.ndarray) -> None:
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            dx = (
                inv_std
                / d
                * (
                    d * dxhat
                    - dxhat.sum(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=1, keepdims=True)
                )
            )
            x.accumulate(dx)

    return make_result(out, (x, gain, bias), backward, "layer_norm")


# === Convolution ===


def conv_output_extent(extent: int, stride: int) -> int:
    return -(-extent // stride)


def conv2d(
    x: Tensor,
    w: Tensor,
    stride: int = 1,
    bias: Tensor | None = None,
) -> Tensor:
    """
    Same-padded, zero-filled 2-D cross-correlation.

    Args:
        x: [c_in x H x W] or a batch [B x c_in x H x W]
        w: [c_out x c_in x k x k], k odd
        stride: output stride; H' = ceil(H / stride)
        bias: optional [c_out]

    Returns:
        [c_out x H' x W'] (or [B x c_out x H' x W'] for batched input)
    """
    batched = x.ndim == 4
    xd = x.data if batched else x.data[None]
    if xd.ndim != 4 or w.ndim != 4:
        raise DimensionError("conv2d: bad ranks", x=list(x.shape), w=list(w.shape))
    n, c_in, h, wd = xd.shape
    c_out, w_cin, k, k2 = w.shape
    if w_cin != c_in:
        raise DimensionError(
            f"conv2d: input has {c_in} channels, kernel expects {w_cin}",
            x=list(x.shape),
            w=list(w.shape),
        )
    if k != k2 or k % 2 == 0:
        raise DimensionError("conv2d: kernel must be square with odd extent", w=list(w.shape))
    if h < k or wd < k:
        raise DimensionError(f"conv2d: field {h}x{wd} smaller than kernel {k}")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1", stride=stride)
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError("conv2d: bias must be [c_out]", bias=list(bias.shape))

    pad = k // 2
    h_out, w_out = conv_output_extent(h, stride), conv_output_extent(wd, stride)
    padded = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    # [n, h_out, w_out, c_in * k * k]
    cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(
        n * h_out * w_out, c_in * k * k
    )
    wmat = w.data.reshape(c_out, c_in * k * k)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = np.ascontiguousarray(out.reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2))
    if not batched:
        out = out[0]

    def backward(g: np.ndarray) -> None:
        gb = g if batched else g[None]
        gm = gb.transpose(0, 2, 3, 1).reshape(-1, c_out)
        if w.requires_grad:
            w.accumulate((gm.T @ cols).reshape(w.shape))
        if bias is not None and bias.requires_grad:
            bias.accumulate(gm.sum(axis=0))
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, h_out, w_out, c_in, k, k)
            dpad = np.zeros_like(padded)
            for ki in range(k):
                for kj in range(k):
                    dpad[
                        :,
                        :,
                        ki : ki + stride * (h_out - 1) + 1 : stride,
                        kj : kj + stride * (w_out - 1) + 1 : stride,
                    ] += dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
            dx = dpad[:, :, pad : pad + h, pad : pad + wd]
            x.accumulate(dx if batched else dx[0])

    parents = (x, w) if bias is None else (x, w, bias)
    return make_result(out.astype(get_dtype(), copy=False), parents, backward, "conv2d")
