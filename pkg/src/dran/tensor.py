"""Dense float64 tensors with reverse-mode automatic differentiation.

Every array quantity in the forecasting network lives in a `Tensor`:
row-major float64 data plus an optional gradient buffer filled by
`backward`. Differentiable ops record a small context (parents and a
backward closure) on their output; `backward` walks the graph once in
reverse topological order and then consumes it.

Checked mode (on by default, toggled per-context with `unchecked()`)
validates that every op result is finite and that divisions never see a
near-zero denominator. Training loops switch it off for speed and guard
the loss value themselves.
"""

from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Sequence

import numpy as np

from . import kernels

DIV_GUARD = 1e-12

_checked = contextvars.ContextVar("dran_checked", default=True)
_grad_enabled = contextvars.ContextVar("dran_grad_enabled", default=True)

_CONSUMED = object()  # sentinel replacing a context after backward


class ShapeError(ValueError):
    """Operand shapes incompatible for the requested operation."""


class NonFiniteError(ValueError):
    """A NaN or Inf appeared while checked mode was active."""


@contextlib.contextmanager
def unchecked():
    """Disable finite/denominator validation inside the block."""
    token = _checked.set(False)
    try:
        yield
    finally:
        _checked.reset(token)


@contextlib.contextmanager
def no_grad():
    """Skip graph recording inside the block (evaluation forward passes)."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def _validate(arr: np.ndarray, what: str) -> None:
    if _checked.get() and not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {what}")


class _Context:
    __slots__ = ("parents", "backward_fn")

    def __init__(self, parents, backward_fn):
        self.parents = parents
        self.backward_fn = backward_fn


class Tensor:
    """N-dimensional float64 array, optionally tracked by the autodiff graph."""

    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        _validate(arr, "tensor creation")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._ctx: _Context | None = None

    # -- basic introspection ------------------------------------------------

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

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- graph plumbing -----------------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate .grad with d(self)/d(leaf) for every requires_grad leaf.

        self must hold exactly one element. The traversed graph is consumed;
        a second backward through any of its nodes raises.
        """
        if self.size != 1:
            raise ValueError(f"backward requires a scalar, got shape {self.shape}")
        if self._ctx is _CONSUMED:
            raise RuntimeError("backward called twice on the same graph")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            if node._ctx is _CONSUMED:
                raise RuntimeError("graph already consumed by a previous backward")
            stack.append((node, True))
            if node._ctx is not None:
                for p in node._ctx.parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            ctx = node._ctx
            if node.requires_grad and ctx is None:
                # leaves only: intermediate gradients are never read back
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
            if ctx is None:
                continue
            parent_grads = ctx.backward_fn(g)
            for parent, pg in zip(ctx.parents, parent_grads):
                if pg is None:
                    continue
                prev = grads.get(id(parent))
                # never accumulate in place: backward closures may hand the
                # same buffer (or views of it) to several parents
                grads[id(parent)] = pg if prev is None else prev + pg
            node._ctx = _CONSUMED

        self._ctx = _CONSUMED

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self):
        return transpose(self)

    def permute(self, axes):
        return permute(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def apply_op(out_data: np.ndarray, parents: Sequence[Tensor],
             backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
             what: str = "op result") -> Tensor:
    """Wrap an op result, recording the backward closure when needed.

    backward_fn receives the upstream gradient and returns one gradient
    array (or None) per parent, each already shaped like that parent.
    """
    _validate(out_data, what)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.requires_grad = _grad_enabled.get() and any(p.requires_grad for p in parents)
    out._ctx = _Context(tuple(parents), backward_fn) if out.requires_grad else None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary_data(a: Tensor, b, opname: str):
    bt = _as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, bt.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {bt.shape} "
                         "are not broadcast-compatible") from None
    return a, bt


# ---------------------------------------------------------------------------
# Arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    a, b = _binary_data(a, b, "add")
    return apply_op(a.data + b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    a, b = _binary_data(a, b, "sub")
    return apply_op(a.data - b.data, (a, b),
                    lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    a, b = _binary_data(a, b, "mul")
    return apply_op(a.data * b.data, (a, b),
                    lambda g: (_unbroadcast(g * b.data, a.shape),
                               _unbroadcast(g * a.data, b.shape)))


def div(a: Tensor, b) -> Tensor:
    a, b = _binary_data(a, b, "div")
    if _checked.get() and np.any(np.abs(b.data) < DIV_GUARD):
        raise ZeroDivisionError(f"div: denominator has magnitude below {DIV_GUARD}")
    inv = 1.0 / b.data
    out = a.data * inv

    def backward(g):
        ga = _unbroadcast(g * inv, a.shape)
        gb = _unbroadcast(-g * out * inv, b.shape)
        return ga, gb

    return apply_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return apply_op(-a.data, (a,), lambda g: (-g,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the trailing two axes, broadcasting leading axes."""
    b = _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs ndim >= 2, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ for {a.shape} @ {b.shape}")

    if b.ndim == 2 and a.ndim > 2:
        # stacked-by-matrix case (affine layers): one flat GEMM instead of a
        # gufunc loop over thousands of tiny products
        k, n = b.shape
        out = (a.data.reshape(-1, k) @ b.data).reshape(*a.shape[:-1], n)

        def backward(g):
            g2 = g.reshape(-1, n)
            ga = (g2 @ b.data.T).reshape(a.shape)
            gb = a.data.reshape(-1, k).T @ g2
            return ga, gb

        return apply_op(out, (a, b), backward)

    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: leading axes of {a.shape} and {b.shape} "
                         "do not broadcast") from None

    def backward(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return apply_op(out, (a, b), backward)


# ---------------------------------------------------------------------------
# Shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.shape
    return apply_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor) -> Tensor:
    """Swap the trailing two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose needs ndim >= 2, got {a.shape}")
    return apply_op(np.swapaxes(a.data, -1, -2), (a,),
                    lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return apply_op(np.transpose(a.data, axes), (a,),
                    lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return apply_op(out, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return apply_op(a.data[idx].copy(), (a,), backward)


# ---------------------------------------------------------------------------
# Reductions
# ---------------------------------------------------------------------------

def _restore_axes(g: np.ndarray, shape, axis, keepdims):
    if axis is not None and not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _axis_count(shape, axis) -> int:
    if axis is None:
        return int(np.prod(shape)) if shape else 1
    axes = axis if isinstance(axis, tuple) else (axis,)
    n = 1
    for ax in axes:
        n *= shape[ax % len(shape)]
    return n


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    return apply_op(np.asarray(out), (a,),
                    lambda g: (_restore_axes(g, a.shape, axis, keepdims),))


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = a.data.mean(axis=axis, keepdims=keepdims)
    count = _axis_count(a.shape, axis)
    return apply_op(np.asarray(out), (a,),
                    lambda g: (_restore_axes(g, a.shape, axis, keepdims) / count,))


# ---------------------------------------------------------------------------
# Elementwise nonlinearities
# ---------------------------------------------------------------------------

def texp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return apply_op(out, (a,), lambda g: (g * out,))


def tlog(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return apply_op(out, (a,), lambda g: (g / a.data,))


def tsqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return apply_op(out, (a,), lambda g: (g * 0.5 / out,))


def tabs(a: Tensor) -> Tensor:
    return apply_op(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sigmoid(a: Tensor) -> Tensor:
    out = kernels.sigmoid(a.data)
    return apply_op(out, (a,), lambda g: (kernels.sigmoid_grad(out, g),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    # np.maximum (not where) so NaN propagates in unchecked mode
    return apply_op(np.maximum(a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    out = kernels.softplus(a.data)
    return apply_op(out, (a,), lambda g: (g * kernels.sigmoid(a.data),))


def maximum_const(a: Tensor, c: float) -> Tensor:
    """Elementwise max(a, c); gradient passes where a >= c."""
    mask = a.data >= c
    return apply_op(np.maximum(a.data, c), (a,), lambda g: (g * mask,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    axis = axis % a.ndim
    last = a.ndim - 1
    moved = np.moveaxis(a.data, axis, last) if axis != last else a.data
    y = kernels.softmax_lastaxis(moved)
    out = np.moveaxis(y, last, axis) if axis != last else y

    def backward(g):
        gm = np.moveaxis(g, axis, last) if axis != last else g
        gin = kernels.softmax_grad_lastaxis(y, gm)
        return (np.moveaxis(gin, last, axis) if axis != last else gin,)

    return apply_op(out, (a,), backward)
