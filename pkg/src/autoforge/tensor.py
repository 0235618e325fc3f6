"""Dense tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array plus an optional record of the operation
that produced it (parent tensors and a backward closure). Executing ops
therefore appends nodes to an implicit tape in topological order;
``Tensor.backward()`` replays that tape in reverse and accumulates
gradients into every ``requires_grad`` leaf.

Broadcasting is deliberately minimal: a scalar broadcasts anywhere, and a
per-channel vector of shape ``(C,)`` or ``(1, C, 1, 1)`` broadcasts over
``(N, C)`` / ``(N, C, H, W)``. That is everything the layer stack needs,
and it keeps every backward rule small enough to verify by hand.

Default precision is float32; pass float64 arrays (or use
``Tensor.astype``) for finite-difference gradient checking.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import ContractError, ShapeError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


def set_thread_cap(n: int):
    """Cap the BLAS/OpenMP worker pools backing numpy (AF_THREADS).

    A cap of 1 is the configuration under which runs are guaranteed
    bit-reproducible; it is also usually fastest at desk scale, where the
    matrices are too small to amortize thread synchronization.
    """
    import threadpoolctl

    threadpoolctl.threadpool_limits(limits=int(n))


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / frozen forward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """N-dimensional array of real scalars, optionally recorded on the tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn: Optional[Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]] = None

    # -- structure ---------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Tensor":
        """Same data, severed from the tape."""
        return Tensor(self.data, requires_grad=False)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad)

    def zero_grad(self):
        self.grad = None

    # -- tape --------------------------------------------------------------

    def _record(self, parents: tuple["Tensor", ...], backward_fn) -> "Tensor":
        """Mark self as produced by an op over `parents` (when recording is on)."""
        if _grad_enabled and any(p.requires_grad for p in parents):
            self.requires_grad = True
            self._parents = parents
            self._backward_fn = backward_fn
        return self

    def backward(self):
        """Accumulate d(self)/d(leaf) into .grad of every requires_grad leaf.

        `self` must be a scalar (single element) that was recorded on the
        tape; gradients from multiple uses of a tensor sum.
        """
        if self.size != 1:
            raise ContractError(f"backward requires a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            raise ContractError("backward on a tensor that is not recorded on the tape")

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
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward_fn(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g

    # -- constructors --------------------------------------------------------

    @staticmethod
    def zeros(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def ones(shape, dtype=DEFAULT_DTYPE, requires_grad=False) -> "Tensor":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=requires_grad)

    @staticmethod
    def full(shape, value, dtype=DEFAULT_DTYPE) -> "Tensor":
        return Tensor(np.full(shape, value, dtype=dtype))

    # -- elementwise ---------------------------------------------------------

    def __add__(self, other):
        return _binary_op(self, other, np.add, _add_backward)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary_op(self, other, np.subtract, _sub_backward)

    def __rsub__(self, other):
        return _binary_op(_coerce(other, self.dtype), self, np.subtract, _sub_backward)

    def __mul__(self, other):
        return _binary_op(self, other, np.multiply, _mul_backward)

    __rmul__ = __mul__

    def __neg__(self):
        out = Tensor(-self.data)
        return out._record((self,), lambda g: (-g,))

    def neg(self):
        return -self

    def log(self):
        out = Tensor(np.log(self.data))
        return out._record((self,), lambda g: (g / self.data,))

    def exp(self):
        out = Tensor(np.exp(self.data))
        return out._record((self,), lambda g: (g * out.data,))

    def tanh(self):
        out = Tensor(np.tanh(self.data))
        return out._record((self,), lambda g: (g * (1.0 - out.data * out.data),))

    def sigmoid(self):
        out = Tensor(_stable_sigmoid(self.data))
        return out._record((self,), lambda g: (g * out.data * (1.0 - out.data),))

    def relu(self):
        out = Tensor(np.maximum(self.data, 0))
        return out._record((self,), lambda g: (g * (self.data > 0),))

    def leaky_relu(self, slope: float = 0.2):
        out = Tensor(np.where(self.data > 0, self.data, self.data * slope))
        return out._record((self,), lambda g: (g * np.where(self.data > 0, 1.0, slope).astype(g.dtype),))

    def clamp(self, lo: float, hi: float):
        out = Tensor(np.clip(self.data, lo, hi))
        mask = (self.data >= lo) & (self.data <= hi)
        return out._record((self,), lambda g: (g * mask,))

    # -- linear algebra / shape ------------------------------------------------

    def matmul(self, other: "Tensor") -> "Tensor":
        if self.ndim != 2 or other.ndim != 2:
            raise ShapeError(f"matmul expects 2-d operands, got {self.shape} and {other.shape}")
        if self.shape[1] != other.shape[0]:
            raise ShapeError(f"matmul inner dimensions disagree: {self.shape} x {other.shape}")
        out = Tensor(self.data @ other.data)

        def backward(g):
            da = g @ other.data.T if self.requires_grad else None
            db = self.data.T @ g if other.requires_grad else None
            return da, db

        return out._record((self, other), backward)

    __matmul__ = matmul

    def reshape(self, *shape) -> "Tensor":
        new_shape = tuple(shape[0]) if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape
        if int(np.prod(new_shape)) != self.size:
            raise ShapeError(f"reshape {self.shape} -> {new_shape} changes element count")
        old_shape = self.shape
        out = Tensor(self.data.reshape(new_shape))
        return out._record((self,), lambda g: (g.reshape(old_shape),))

    def flatten_batch(self) -> "Tensor":
        """(N, ...) -> (N, prod(rest))."""
        return self.reshape(self.shape[0], int(np.prod(self.shape[1:])))

    # -- reductions -------------------------------------------------------------

    def sum(self, axes=None) -> "Tensor":
        axes = _check_axes(self.shape, axes)
        out = Tensor(self.data.sum(axis=axes))
        return out._record((self,), lambda g: (_spread(g, self.shape, axes),))

    def mean(self, axes=None) -> "Tensor":
        axes = _check_axes(self.shape, axes)
        n = self.size if axes is None else int(np.prod([self.shape[a] for a in axes]))
        out = Tensor(self.data.mean(axis=axes))
        return out._record((self,), lambda g: (_spread(g, self.shape, axes) / n,))


def make_op(data: np.ndarray, parents: Iterable[Tensor], backward_fn) -> Tensor:
    """Create a tensor from a fused op with a hand-written backward rule.

    `backward_fn(upstream) -> per-parent gradients (or None)` is recorded
    only when some parent requires grad and recording is enabled.
    """
    out = Tensor(data)
    return out._record(tuple(parents), backward_fn)


def zero_grads(tensors: Iterable[Tensor]):
    for t in tensors:
        t.grad = None


# -- helpers ------------------------------------------------------------------


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _coerce(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _broadcast_view(small: np.ndarray, target_shape: tuple[int, ...]):
    """View of `small` broadcastable against `target_shape` plus the axes to
    reduce the gradient over. Only the channel-vector rules are supported."""
    s = small.shape
    if s == target_shape:
        return small, None
    if s == ():
        return small, tuple(range(len(target_shape)))
    if len(target_shape) == 2 and s == (target_shape[1],):
        return small, (0,)
    if len(target_shape) == 4 and s == (target_shape[1],):
        return small.reshape(1, -1, 1, 1), (0, 2, 3)
    if len(target_shape) == 4 and s == (1, target_shape[1], 1, 1):
        return small, (0, 2, 3)
    raise ShapeError(f"cannot broadcast {s} against {target_shape}")


def _reduce_grad(g: np.ndarray, orig_shape: tuple[int, ...], axes) -> np.ndarray:
    if axes is None:
        return g
    return g.sum(axis=axes).reshape(orig_shape)


def _binary_op(a, b, fn, backward_builder) -> Tensor:
    a = _coerce(a, getattr(b, "dtype", DEFAULT_DTYPE))
    b = _coerce(b, a.dtype)
    # orient so `big` carries the full output shape
    if a.size >= b.size:
        big, small, swapped = a, b, False
    else:
        big, small, swapped = b, a, True
    view, axes = _broadcast_view(small.data, big.shape)
    lhs_data, rhs_data = (view, big.data) if swapped else (big.data, view)
    out = Tensor(fn(lhs_data, rhs_data))
    backward = backward_builder(a, b, swapped, view, axes)
    return out._record((a, b), backward)


def _add_backward(a, b, swapped, view, axes):
    def backward(g):
        g_small = _reduce_grad(g, (a if swapped else b).shape, axes)
        return (g_small, g) if swapped else (g, g_small)

    return backward


def _sub_backward(a, b, swapped, view, axes):
    def backward(g):
        if swapped:  # a is the small operand
            return _reduce_grad(g, a.shape, axes), -g
        return g, -_reduce_grad(g, b.shape, axes)

    return backward


def _mul_backward(a, b, swapped, view, axes):
    def backward(g):
        if swapped:  # a small, b big
            ga = _reduce_grad(g * b.data, a.shape, axes)
            gb = g * view
        else:  # a big, b small
            ga = g * view
            gb = _reduce_grad(g * a.data, b.shape, axes)
        return ga, gb

    return backward


def _check_axes(shape, axes):
    if axes is None:
        return None
    if isinstance(axes, int):
        axes = (axes,)
    axes = tuple(axes)
    for ax in axes:
        if not (0 <= ax < len(shape)):
            raise ShapeError(f"axis {ax} out of range for shape {shape}")
    return axes


def _spread(g: np.ndarray, full_shape, axes) -> np.ndarray:
    """Broadcast a reduced gradient back over the summed-out axes."""
    if axes is None:
        return np.full(full_shape, g, dtype=g.dtype)
    kept = [1 if i in axes else d for i, d in enumerate(full_shape)]
    return np.broadcast_to(g.reshape(kept), full_shape).copy()
