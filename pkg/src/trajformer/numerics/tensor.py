"""Dense float64 tensors with reverse-mode automatic differentiation.

Forward reductions run in a fixed, position-independent order (einsum loops,
sorted sums) so that permutation symmetries hold bit-exactly.  Backward passes
use BLAS freely; only forward values carry exactness guarantees.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_node_ids = itertools.count()
_state = threading.local()


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self.node_id: int | None = next(_node_ids) if requires_grad else None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        needs = grad_enabled() and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        if needs:
            out.node_id = next(_node_ids)
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.node_id = None
            out._parents = ()
            out._backward = None
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Propagate gradients to every node reachable from ``self``."""
        if grad is None:
            if self.data.size != 1:
                raise DimensionError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topological_order(self)
        self._accumulate(np.broadcast_to(np.asarray(grad, dtype=np.float64), self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        # release intermediate buffers; leaves keep their grads
        for node in order:
            if node._parents:
                node.grad = None
                node._backward = None
                node._parents = ()

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / float(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -- elementwise ----------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return Tensor._from_op(data, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(-g)

    return Tensor._from_op(-a.data, (a,), backward)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: cannot broadcast {a.shape} with {b.shape}") from exc

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return Tensor._from_op(data, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        a._accumulate(g * mask)

    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out = _stable_sigmoid(a.data)

    def backward(g):
        a._accumulate(g * out * (1.0 - out))

    return Tensor._from_op(out, (a,), backward)


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def backward(g):
        a._accumulate(g * out)

    return Tensor._from_op(out, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        a._accumulate(g / a.data)

    return Tensor._from_op(np.log(a.data), (a,), backward)


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def backward(g):
        a._accumulate(g * sign)

    return Tensor._from_op(np.abs(a.data), (a,), backward)


# -- shape ----------------------------------------------------------------------
def reshape(a: Tensor, shape) -> Tensor:
    try:
        data = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: {a.shape} -> {shape}") from exc

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return Tensor._from_op(data, (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def backward(g):
        a._accumulate(np.transpose(g, inv))

    return Tensor._from_op(np.ascontiguousarray(np.transpose(a.data, axes)), (a,), backward)


def getitem(a: Tensor, idx) -> Tensor:
    data = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return Tensor._from_op(np.array(data, copy=True), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: shapes {[t.shape for t in tensors]}") from exc
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return Tensor._from_op(data, tensors, backward)


def broadcast_to(a: Tensor, shape) -> Tensor:
    data = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def backward(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return Tensor._from_op(data, (a,), backward)


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return Tensor._from_op(np.asarray(data), (a,), backward)


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(tsum(a, axis, keepdims), 1.0 / float(n))


# -- linear algebra ---------------------------------------------------------------
def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the trailing axis of ``x``; row results are position independent."""
    if x.shape[-1] != w.shape[0]:
        raise DimensionError(f"linear: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    data = np.einsum("...k,km->...m", x.data, w.data)
    if b is not None:
        data = data + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ w.data.T)
        if w.requires_grad:
            w._accumulate(x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
        if b is not None and b.requires_grad:
            b._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))

    return Tensor._from_op(data, parents, backward)


# -- reductions with learned-block semantics ----------------------------------------
def masked_max(x: Tensor, mask: np.ndarray | None = None, axis: int = -2) -> Tensor:
    """Max over ``axis``; masked-out rows are replaced by -inf first.

    Gradient routes to the first maximal index along ``axis``.
    """
    axis = axis % x.ndim
    if x.shape[axis] == 0:
        raise ValueError("masked_max: empty reduction axis")
    vals = x.data
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        m = m.reshape(m.shape + (1,) * (x.ndim - 1 - axis))
        if not np.all(m.any(axis=axis)):
            raise ValueError("masked_max: a slice has no valid rows")
        vals = np.where(m, vals, -np.inf)
    idx = np.argmax(vals, axis=axis)  # first occurrence on ties
    out = np.take_along_axis(vals, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def backward(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        x._accumulate(full)

    return Tensor._from_op(out, (x,), backward)


def max_pool_rows(x: Tensor) -> Tensor:
    """Element-wise maximum over the rows of an ``[n, d]`` tensor."""
    if x.ndim != 2:
        raise DimensionError(f"max_pool_rows expects [n, d], got {x.shape}")
    if x.shape[0] < 1:
        raise ValueError("max_pool_rows: need at least one row")
    return masked_max(x, None, axis=0)


def _ordered_sum(values: np.ndarray, axis: int) -> np.ndarray:
    # sorting first makes the result independent of input order
    return np.sort(values, axis=axis).sum(axis=axis)


def softmax_rows(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / _ordered_sum(e, -1)[..., None]

    def backward(g):
        x._accumulate(out * (g - (g * out).sum(axis=-1, keepdims=True)))

    return Tensor._from_op(out, (x,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    d = x.shape[-1]

    def backward(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            beta._accumulate(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            gx = g * gamma.data
            x._accumulate(
                inv * (gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
            )

    return Tensor._from_op(out, (x, gamma, beta), backward)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes, batched over leading axes.

    Every reduction over the key axis is done in sorted order, so permuting
    keys/values together leaves the output bit-identical.
    """
    if q.shape[-1] != k.shape[-1] or k.shape[:-1] != v.shape[:-1]:
        raise DimensionError(f"attention: q {q.shape}, k {k.shape}, v {v.shape}")
    scale = 1.0 / np.sqrt(q.shape[-1])
    scores = (q.data[..., :, None, :] * k.data[..., None, :, :]).sum(axis=-1) * scale
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / _ordered_sum(e, -1)[..., None]
    out = _ordered_sum(attn[..., :, :, None] * v.data[..., None, :, :], -2)

    def backward(g):
        if v.requires_grad:
            v._accumulate(np.swapaxes(attn, -1, -2) @ g)
        ga = g @ np.swapaxes(v.data, -1, -2)
        gs = attn * (ga - (ga * attn).sum(axis=-1, keepdims=True)) * scale
        if q.requires_grad:
            q._accumulate(gs @ k.data)
        if k.requires_grad:
            k._accumulate(np.swapaxes(gs, -1, -2) @ q.data)

    return Tensor._from_op(out, (q, k, v), backward)


# -- losses -----------------------------------------------------------------------
def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross entropy, computed from logits for stability."""
    z = logits.data
    y = np.asarray(targets, dtype=np.float64)
    per = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = max(z.size, 1)

    def backward(g):
        logits._accumulate(g * (_stable_sigmoid(z) - y) / n)

    return Tensor._from_op(np.asarray(per.sum() / n), (logits,), backward)


def smooth_l1(diff: Tensor, beta: float = 1.0 / 9.0) -> Tensor:
    """Element-wise smooth-L1 (Huber with transition ``beta``)."""
    a = np.abs(diff.data)
    small = a < beta
    out = np.where(small, 0.5 * diff.data**2 / beta, a - 0.5 * beta)

    def backward(g):
        diff._accumulate(g * np.where(small, diff.data / beta, np.sign(diff.data)))

    return Tensor._from_op(out, (diff,), backward)


def parameters_of(tensors: Iterable[Tensor]) -> list[Tensor]:
    return [t for t in tensors if t.requires_grad]
