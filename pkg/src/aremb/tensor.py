"""Dense tensors with reverse-mode automatic differentiation.

Values live in numpy arrays; every differentiable op records its parents and
a closure that routes the incoming gradient to them. The graph is built per
forward pass and freed as soon as ``backward`` has consumed it. Gradient
accumulation follows a fixed depth-first topological order, so repeated runs
on identical inputs are bitwise identical.
"""

from __future__ import annotations

import contextlib
from typing import Sequence

import numpy as np

from .errors import NumericError, ShapeError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference / oracles)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse-mode autodiff.

    ``grad`` is allocated (zero-filled, same shape) exactly when
    ``requires_grad`` is true. Tensors are treated as immutable once created;
    the only sanctioned mutations are gradient accumulation during a backward
    pass and in-place parameter updates by an optimizer that owns them.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        if isinstance(data, np.ndarray):
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def backward(self) -> None:
        """Backpropagate from this scalar; frees the graph afterwards."""
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node._parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad[...] = 1.0
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            node._parents = ()
            node._backward = None

    # ---- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        other = _coerce(other, self)
        return mul(self, power(other, -1.0))

    def __rtruediv__(self, other):
        return mul(_coerce(other, self), power(self, -1.0))

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return tslice(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _node(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = np.zeros_like(out.data)
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.data.shape)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.data.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.data.shape)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.data.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.data.shape)

    return _node(a.data * b.data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.grad -= g

    return _node(-a.data, (a,), backward)


def power(a: Tensor, exponent: float) -> Tensor:
    out_data = a.data ** exponent

    def backward(g):
        if a.requires_grad:
            a.grad += g * exponent * a.data ** (exponent - 1.0)

    return _node(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * out_data

    return _node(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.grad += g / a.data

    return _node(np.log(a.data), (a,), backward)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * (1.0 - out_data * out_data)

    return _node(out_data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.grad += g * np.sign(a.data)

    return _node(np.abs(a.data), (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branch form: both exp arguments are <= 0, so neither tail overflows
    x = np.asarray(x)
    ex = np.exp(np.minimum(x, 0.0))
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.maximum(x, 0.0))), ex / (1.0 + ex))


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * out_data * (1.0 - out_data)

    return _node(out_data, (a,), backward)


def log_sigmoid(a: Tensor) -> Tensor:
    out_data = -np.logaddexp(0.0, -a.data)

    def backward(g):
        if a.requires_grad:
            a.grad += g * _sigmoid(-a.data)

    return _node(out_data, (a,), backward)


def gelu(a: Tensor) -> Tensor:
    """Smooth tanh-approximation GELU (smoothness keeps gradchecks clean)."""
    c = np.sqrt(2.0 / np.pi)
    inner = mul(_coerce(c, a), add(a, mul(_coerce(0.044715, a), power(a, 3.0))))
    return mul(mul(_coerce(0.5, a), a), add(_coerce(1.0, a), tanh(inner)))


# ---- linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.grad += g @ b.data.T
        if b.requires_grad:
            b.grad += a.data.T @ g

    return _node(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.grad += g.T

    return _node(a.data.T, (a,), backward)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``; backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.intp)

    def backward(g):
        if table.requires_grad:
            np.add.at(table.grad, ids, g)

    return _node(table.data[ids], (table,), backward)


# ---- reductions and reshaping -------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += g
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gg, a.data.shape)

    return _node(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else a.data.shape[axis]

    def backward(g):
        if not a.requires_grad:
            return
        if axis is None:
            a.grad += g / count
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            a.grad += np.broadcast_to(gg, a.data.shape) / count

    return _node(a.data.mean(axis=axis, keepdims=keepdims), (a,), backward)


def tslice(a: Tensor, key) -> Tensor:
    """Basic-indexing slice; backward adds into the sliced region."""

    def backward(g):
        if a.requires_grad:
            a.grad[key] += g

    return _node(a.data[key], (a,), backward)


def take_per_row(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick ``a[i, idx[i]]`` for every row i of a 2-D tensor."""
    idx = np.asarray(idx, dtype=np.intp)
    rows = np.arange(a.data.shape[0])

    def backward(g):
        if a.requires_grad:
            np.add.at(a.grad, (rows, idx), g)

    return _node(a.data[rows, idx], (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(lo, hi)
                t.grad += g[tuple(index)]

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack same-shape tensors along a new leading axis."""
    tensors = list(tensors)

    def backward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.grad += g[i]

    return _node(np.stack([t.data for t in tensors]), tuple(tensors), backward)


# ---- softmax family ------------------------------------------------------


def log_softmax(a: Tensor) -> Tensor:
    """Row-wise log-softmax over the last axis via max-shifted log-sum-exp."""
    if not np.all(np.isfinite(a.data)):
        raise NumericError("log_softmax: input contains non-finite values")
    shift = a.data - a.data.max(axis=-1, keepdims=True)
    out_data = shift - np.log(np.exp(shift).sum(axis=-1, keepdims=True))

    def backward(g):
        if a.requires_grad:
            a.grad += g - np.exp(out_data) * g.sum(axis=-1, keepdims=True)

    return _node(out_data, (a,), backward)


def softmax(a: Tensor) -> Tensor:
    return exp(log_softmax(a))


def logsumexp(a: Tensor) -> Tensor:
    """Log-sum-exp of a 1-D tensor, max-shifted."""
    m = a.data.max()
    shifted = np.exp(a.data - m)
    total = shifted.sum()
    out_data = np.asarray(m + np.log(total), dtype=a.data.dtype)

    def backward(g):
        if a.requires_grad:
            a.grad += g * shifted / total

    return _node(out_data, (a,), backward)


def kl_elements(p: Tensor, q: Tensor) -> Tensor:
    """Elementwise ``p * (log p - log q)`` with the 0 log 0 = 0 convention."""
    if p.data.shape != q.data.shape:
        raise ShapeError(f"kl_elements: shapes differ {p.data.shape} vs {q.data.shape}")
    mask = p.data > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, np.log(p.data, where=mask) - np.log(q.data), 0.0)
    out_data = np.where(mask, p.data * ratio, 0.0)

    def backward(g):
        if p.requires_grad:
            p.grad += g * np.where(mask, ratio + 1.0, 0.0)
        if q.requires_grad:
            q.grad -= g * np.where(mask, p.data / q.data, 0.0)

    return _node(out_data, (p, q), backward)
