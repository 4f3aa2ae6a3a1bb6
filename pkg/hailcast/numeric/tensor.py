"""
Tensor

Dense row-major array plus the reverse-mode tape used for training.

Every primitive in ``hailcast.numeric.ops`` returns a new Tensor that
records its parents and a backward closure. ``Tensor.backward()`` walks
the recorded graph once in reverse topological order and accumulates
``.grad`` on every node that requires it.

Precision is chosen repo-wide: float64 by default (gradient checks rely
on it), float32 through ``set_precision("float32")`` for faster training.
"""

from collections.abc import Callable, Iterator, Sequence
from contextlib import contextmanager
from contextvars import ContextVar

import numpy as np

from hailcast.core.errors import ConfigurationError, DimensionError, NonFiniteError

PRECISIONS: dict[str, type[np.floating]] = {
    "float64": np.float64,
    "float32": np.float32,
}

_dtype: type[np.floating] = np.float64
_grad_enabled: ContextVar[bool] = ContextVar("grad_enabled", default=True)


def set_precision(name: str) -> None:
    """Select the repo-wide floating precision."""
    global _dtype
    if name not in PRECISIONS:
        raise ConfigurationError(
            f"Unknown precision {name!r}", allowed=sorted(PRECISIONS)
        )
    _dtype = PRECISIONS[name]


def get_dtype() -> type[np.floating]:
    """Return the active floating dtype."""
    return _dtype


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block (inference paths)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """
    Array node of the differentiable graph.

    Attributes:
        data: ndarray holding the values (shape == extents)
        grad: accumulated gradient, same shape as data, or None
        requires_grad: whether gradients flow into this node
        name: optional label (parameters carry their registry name)
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "op", "_parents", "_backward")

    def __init__(
        self,
        data: np.ndarray | float | Sequence,
        requires_grad: bool = False,
        name: str | None = None,
        dtype: np.dtype | type[np.floating] | None = None,
    ):
        self.data = np.asarray(data, dtype=dtype or _dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # === Introspection ===

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.size != 1:
            raise DimensionError("item() needs a single-element tensor", shape=list(self.shape))
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op!r}{label})"

    # === Graph ===

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=self.data.dtype, copy=True)
        else:
            self.grad += grad

    def backward(self, grad: np.ndarray | None = None) -> None:
        """
        Backpropagate from this node.

        Each node of the graph is visited exactly once, in reverse
        topological order. Without an explicit seed gradient the node must
        be a scalar.
        """
        if not self.requires_grad:
            return
        if grad is None:
            if self.size != 1:
                raise ConfigurationError(
                    "backward() without a seed gradient needs a scalar",
                    shape=list(self.shape),
                )
            grad = np.ones_like(self.data)

        order = _topological_order(self)
        self.accumulate(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # === Operators ===

    def __add__(self, other: "Tensor | float") -> "Tensor":
        from hailcast.numeric.ops import add

        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other: "Tensor | float") -> "Tensor":
        from hailcast.numeric.ops import sub

        return sub(self, other)

    def __rsub__(self, other: "Tensor | float") -> "Tensor":
        from hailcast.numeric.ops import sub

        return sub(as_tensor(other), self)

    def __mul__(self, other: "Tensor | float") -> "Tensor":
        from hailcast.numeric.ops import mul

        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other: float) -> "Tensor":
        from hailcast.numeric.ops import mul

        return mul(self, 1.0 / other)

    def __neg__(self) -> "Tensor":
        from hailcast.numeric.ops import mul

        return mul(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        from hailcast.numeric.ops import matmul

        return matmul(self, other)


def as_tensor(value: "Tensor | np.ndarray | float") -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def make_result(
    data: np.ndarray,
    parents: tuple[Tensor, ...],
    backward: Callable[[np.ndarray], None],
    op: str,
) -> Tensor:
    """
    Wrap a primitive's output and record it on the tape.

    Raises NonFiniteError when the primitive produced NaN/Inf.
    """
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"Primitive {op!r} produced non-finite values", op=op)
    out = Tensor(data)
    out.op = op
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _topological_order(root: Tensor) -> list[Tensor]:
    # Iterative DFS; deep transformer graphs exceed the recursion limit.
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order
