"""Dense tensors with reverse-mode differentiation.

Every array in the model is a `Tensor` wrapping a numpy array of the
current global precision (32- or 64-bit, one setting for the whole
graph).  Differentiable operations build a DAG of parent links plus a
backward closure; `Tensor.backward()` walks the DAG in reverse
topological order and accumulates gradients into `.grad`.

Randomness never comes from module state: every stochastic operation
takes an explicit `numpy.random.Generator`.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np

from ..errors import DimensionError, NumericError

_PRECISION_BITS = 32
_GRAD_ENABLED = True


def set_precision(bits: int) -> None:
    """Select the global floating point width (32 or 64)."""
    global _PRECISION_BITS
    if bits not in (32, 64):
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _PRECISION_BITS = bits


def precision_bits() -> int:
    return _PRECISION_BITS


def float_dtype() -> np.dtype:
    return np.dtype(np.float64 if _PRECISION_BITS == 64 else np.float32)


@contextmanager
def precision(bits: int):
    """Temporarily switch the global precision (used by gradient checks)."""
    old = _PRECISION_BITS
    set_precision(bits)
    try:
        yield
    finally:
        set_precision(old)


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation mode)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    """A numpy-backed array node in the autodiff graph.

    Leaf tensors are created from raw data (validated finite, rank <= 4);
    interior tensors are created by ops via `make_node` and carry a
    backward closure that scatters the output gradient to the parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=float_dtype())
        if arr.ndim > 4:
            raise DimensionError(f"tensors are limited to rank 4, got rank {arr.ndim}")
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor initialized with non-finite values")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def make_node(data: np.ndarray, parents: tuple["Tensor", ...],
                  backward_fn: Callable[[np.ndarray], None]) -> "Tensor":
        """Create an interior node; drops the graph when grads are off."""
        if data.ndim > 4:
            raise DimensionError(f"tensors are limited to rank 4, got rank {data.ndim}")
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward_fn = backward_fn
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward_fn = None
        return out

    def accumulate_grad(self, g: np.ndarray) -> None:
        # Gradients are accumulated out of place: backward closures may hand
        # the same array to several parents, so stored arrays are never
        # mutated (zero_grad reassigns rather than filling).
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g if g.dtype == self.data.dtype else g.astype(self.data.dtype)
        else:
            self.grad = self.grad + g

    def backward(self) -> None:
        """Reverse-mode sweep seeded from this (scalar) tensor."""
        if self.data.size != 1:
            raise DimensionError(
                f"backward() requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn(node.grad)

    # -- conveniences --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def to_numpy(self) -> np.ndarray:
        return np.array(self.data, copy=True)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"

    # operator sugar; implementations live in ops.py to avoid an import cycle
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops
        return ops.power(self, exponent)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Parameter:
    """Named trainable leaf with a persistent zero-initialized gradient."""

    def __init__(self, name: str, data):
        self.name = name
        self.tensor = Tensor(data, requires_grad=True)
        self.tensor.grad = np.zeros_like(self.tensor.data)

    @property
    def gradient(self) -> np.ndarray:
        return self.tensor.grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.tensor.shape

    @property
    def size(self) -> int:
        return self.tensor.size

    def zero_grad(self) -> None:
        self.tensor.grad = np.zeros_like(self.tensor.data)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def assert_finite(t: Tensor, stage: str) -> Tensor:
    """Raise NumericError naming `stage` if the tensor has NaN/Inf values."""
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values at stage '{stage}'")
    return t


def collect_parameters(params: Iterable[Parameter]) -> list[Parameter]:
    """Validate name uniqueness and return the parameter list."""
    out = list(params)
    names = [p.name for p in out]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate parameter names: {dupes}")
    return out
