"""Dense float64 tensors with reverse-mode automatic differentiation.

A Tensor wraps a numpy array plus a lazily allocated gradient buffer and,
for op results, a graph node recording its parents and the local backward
rule. `backward(loss)` walks the graph in reverse topological order and
accumulates d(loss)/d(tensor) into every reachable tensor, additively
across fan-out. Graphs are acyclic by construction (ops only ever create
new result tensors).

Only the operations the attention/GRU classifier needs are provided; there
is no general broadcasting engine beyond what those ops use (bias adds,
scalar constants).
"""

from __future__ import annotations

import numpy as np

from . import kernels

Array = np.ndarray

LAYERNORM_EPS = 1e-5


class ShapeMismatch(ValueError):
    """Operands have incompatible shapes for the requested op."""


class NonScalarLoss(ValueError):
    """backward() was asked to start from a non-scalar tensor."""


class Node:
    """Backward-graph record: parent tensors plus the local vjp."""

    __slots__ = ("parents", "vjp")

    def __init__(self, parents, vjp):
        self.parents = parents
        self.vjp = vjp


class Tensor:
    __slots__ = ("data", "grad", "node")

    def __init__(self, data, node=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        kind = "leaf" if self.node is None else "op"
        return f"Tensor(shape={self.data.shape}, {kind})"

    # value-like: a fresh copy detached from any graph
    def detach(self):
        return Tensor(self.data.copy())

    def item(self):
        return float(self.data)

    # operators ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)

    def slice(self, axis, start, length):
        return narrow(self, axis, start, length)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjp):
    return Tensor(data, node=Node(tuple(parents), vjp))


def _unbroadcast(grad, shape):
    """Reduce `grad` back to `shape` after a numpy-broadcast forward op."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# elementwise ----------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatch(f"add: shapes {a.shape} and {b.shape} do not align")

    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(data, (a, b), vjp)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeMismatch(f"sub: shapes {a.shape} and {b.shape} do not align")

    def vjp(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result(data, (a, b), vjp)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatch(f"mul: shapes {a.shape} and {b.shape} do not align")

    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(data, (a, b), vjp)


def scale(a, c):
    a = as_tensor(a)
    c = float(c)

    def vjp(g):
        return (g * c,)

    return _result(a.data * c, (a,), vjp)


def sigmoid(a):
    a = as_tensor(a)
    e = np.exp(-np.abs(a.data))
    data = np.where(a.data >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))

    def vjp(g):
        return (g * data * (1.0 - data),)

    return _result(data, (a,), vjp)


def tanh(a):
    a = as_tensor(a)
    data = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - data * data),)

    return _result(data, (a,), vjp)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise ValueError("log: inputs must be strictly positive")
    data = np.log(a.data)

    def vjp(g):
        return (g / a.data,)

    return _result(data, (a,), vjp)


def clamp(a, lo, hi):
    a = as_tensor(a)
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)

    def vjp(g):
        return (g * inside,)

    return _result(data, (a,), vjp)


def dropout(a, rate, rng):
    """Inverted dropout; identity when rate == 0. `rng` is a numpy Generator."""
    a = as_tensor(a)
    if rate == 0.0:
        return a
    keep = rng.random(a.shape) >= rate
    factor = keep / (1.0 - rate)

    def vjp(g):
        return (g * factor,)

    return _result(a.data * factor, (a,), vjp)


# shape ops ------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape

    def vjp(g):
        return (g.reshape(old),)

    return _result(a.data.reshape(shape), (a,), vjp)


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        if a.data.ndim != 2:
            raise ShapeMismatch(
                f"transpose without axes expects a matrix, got shape {a.shape}")
        axes = (1, 0)
    inverse = tuple(np.argsort(axes))

    def vjp(g):
        return (g.transpose(inverse),)

    return _result(a.data.transpose(axes), (a,), vjp)


def concat(tensors, axis):
    tensors = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise ShapeMismatch(f"concat along axis {axis}: incompatible shapes {shapes}")
    offsets = np.cumsum([t.data.shape[axis] for t in tensors])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(data, tensors, vjp)


def narrow(a, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    a = as_tensor(a)
    if not (0 <= start and start + length <= a.data.shape[axis]):
        raise ShapeMismatch(
            f"slice [{start}:{start + length}) out of range for axis {axis} "
            f"of shape {a.shape}")
    index = tuple(
        slice(start, start + length) if d == axis else slice(None)
        for d in range(a.data.ndim))

    def vjp(g):
        buf = np.zeros_like(a.data)
        buf[index] = g
        return (buf,)

    return _result(a.data[index], (a,), vjp)


# reductions -----------------------------------------------------------


def ssum(a, axis=None):
    a = as_tensor(a)
    data = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _result(data, (a,), vjp)


def mean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(ssum(a, axis=axis), 1.0 / n)


# matrix ops -----------------------------------------------------------


def matmul(a, b):
    """Matrix product.

    Accepts (..., m, k) @ (k, n) with a shared right operand (the weight
    case) or two operands with identical leading dimensions (the stacked
    case). Anything else is a shape error.
    """
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeMismatch(
            f"matmul: operands must be at least 2-d, got {a.shape} and {b.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeMismatch(
            f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")
    if bd.ndim == 2:
        data = ad @ bd

        def vjp(g):
            da = g @ bd.T
            db = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return da, db

    elif ad.shape[:-2] == bd.shape[:-2]:
        data = ad @ bd

        def vjp(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    else:
        raise ShapeMismatch(
            f"matmul: leading dimensions disagree for shapes {a.shape} and {b.shape}")
    return _result(data, (a, b), vjp)


# softmax / layernorm / lookup ------------------------------------------


def softmax_rows(a):
    """Softmax along the last axis, max-shifted for stability."""
    a = as_tensor(a)
    if np.isnan(a.data).any():
        raise ValueError("softmax_rows: input contains NaN")
    return _softmax_impl(a, None)


def masked_softmax(a, mask):
    """Softmax along the last axis where `mask` is True; False entries get
    exactly zero weight. `mask` must broadcast to the input shape and keep
    at least one entry per row."""
    a = as_tensor(a)
    mask = np.broadcast_to(mask, a.shape)
    return _softmax_impl(a, mask)


def _softmax_impl(a, mask):
    n = a.data.shape[-1]
    rows = np.ascontiguousarray(a.data.reshape(-1, n))
    mrows = None
    if mask is not None:
        mrows = np.ascontiguousarray(mask.reshape(-1, n), dtype=np.uint8)
    p = kernels.masked_softmax_fwd(rows, mrows)

    def vjp(g):
        dx = kernels.softmax_bwd(p, np.ascontiguousarray(g.reshape(-1, n)))
        return (dx.reshape(a.shape),)

    return _result(p.reshape(a.shape), (a,), vjp)


def layer_norm(a, gain, bias, eps=LAYERNORM_EPS):
    """Normalize over the last (feature) axis, then scale and shift."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    d = a.data.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch(
            f"layer_norm: gain/bias must have shape ({d},), got "
            f"{gain.shape} and {bias.shape}")
    rows = np.ascontiguousarray(a.data.reshape(-1, d))
    y, xhat, inv_std = kernels.layernorm_fwd(rows, gain.data, bias.data, eps)

    def vjp(g):
        dx, dgain, dbias = kernels.layernorm_bwd(
            np.ascontiguousarray(g.reshape(-1, d)), xhat, inv_std, gain.data)
        return dx.reshape(a.shape), dgain, dbias

    return _result(y.reshape(a.shape), (a, gain, bias), vjp)


def embedding_lookup(table, ids):
    """Gather rows of a (V, D) table by an integer id array; the gradient
    scatters back additively (duplicate ids accumulate)."""
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.intp)
    d = table.data.shape[1]

    def vjp(g):
        buf = np.zeros_like(table.data)
        np.add.at(buf, ids.reshape(-1), g.reshape(-1, d))
        return (buf,)

    return _result(table.data[ids], (table,), vjp)


# backward pass ---------------------------------------------------------


def _topo_order(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for p in t.node.parents:
                stack.append((p, False))
    return order


def backward(loss):
    """Populate .grad on every tensor reachable from `loss`.

    Gradients accumulate additively (fan-out sums path contributions) and
    are NOT cleared first: call zero_grads between optimization steps.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"backward expects a scalar loss, got shape {loss.shape}")
    order = _topo_order(loss)
    if loss.grad is None:
        loss.grad = np.zeros_like(loss.data)
    loss.grad += 1.0
    for t in reversed(order):
        if t.node is None or t.grad is None:
            continue
        grads = t.node.vjp(t.grad)
        for parent, g in zip(t.node.parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def zero_grads(tensors):
    for t in tensors:
        t.grad = None


def grad_check(f, x, eps):
    """Max relative error between the analytic gradient of the scalar
    function `f` at `x` and central differences with step `eps`:
    max_i |analytic_i - numeric_i| / max(1, |analytic_i|).

    `f` is re-evaluated with perturbed copies of x.data, so it must be a
    deterministic function of x (and of anything it closes over).
    """
    x.grad = None
    out = f(x)
    if out.data.size != 1:
        raise NonScalarLoss(f"grad_check expects a scalar function, got {out.shape}")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    flat = x.data.reshape(-1)
    numeric = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(f(x).data)
        flat[i] = orig - eps
        f_minus = float(f(x).data)
        flat[i] = orig
        numeric[i] = (f_plus - f_minus) / (2.0 * eps)
    a = analytic.reshape(-1)
    rel = np.abs(a - numeric) / np.maximum(1.0, np.abs(a))
    return float(rel.max()) if rel.size else 0.0
