"""
Numeric core.

Dense float tensors with a reverse-mode tape, the differentiable
primitives the denoiser is written in, and finite-difference checks.
"""

from hailcast.numeric.gradcheck import GradCheckReport, grad_check
from hailcast.numeric.ops import (
    add,
    concat,
    conv2d,
    gelu,
    layer_norm,
    matmul,
    mean_all,
    mse,
    mul,
    permute,
    reshape,
    slice_cols,
    slice_rows,
    softmax_rows,
    sub,
    sum_all,
    transpose,
)
from hailcast.numeric.tensor import (
    Tensor,
    get_dtype,
    no_grad,
    set_precision,
)

__all__ = [
    "GradCheckReport",
    "Tensor",
    "add",
    "concat",
    "conv2d",
    "gelu",
    "get_dtype",
    "grad_check",
    "layer_norm",
    "matmul",
    "mean_all",
    "mse",
    "mul",
    "no_grad",
    "permute",
    "reshape",
    "set_precision",
    "slice_cols",
    "slice_rows",
    "softmax_rows",
    "sub",
    "sum_all",
    "transpose",
]
