"""Reverse-mode differentiation over dense float64 arrays.

A ``Tensor`` records the primitive that produced it and its parent tensors.
Calling :meth:`Tensor.backward` on a scalar walks the recorded graph in
reverse topological order and accumulates ``grad`` on every tensor that
requires it. The graph is rebuilt on every forward pass, so episodes of
different shapes need no special handling.
"""

from __future__ import annotations

import itertools

import numpy as np

from . import _kernels

LEAKY_SLOPE = 0.2

_counter = itertools.count()


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""

    def __init__(self, op, *shapes):
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")
        self.op = op
        self.shapes = shapes


class Tensor:
    __slots__ = ("data", "grad", "op", "parents", "requires_grad", "_backward", "_seq")

    def __init__(self, data, requires_grad=False, op="leaf", parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = backward
        self._seq = next(_counter)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {self.shape}")
        order = _topo_order(self)
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    @property
    def T(self):
        return swapaxes(self, -1, -2)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _topo_order(root):
    # creation order is a valid topological order of the recorded graph
    seen = {id(root): root}
    stack = [root]
    while stack:
        for p in stack.pop().parents:
            if p.requires_grad and id(p) not in seen:
                seen[id(p)] = p
                stack.append(p)
    return sorted(seen.values(), key=_seq_of)


def _seq_of(node):
    return node._seq


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _acc(node, g):
    if not node.requires_grad:
        return
    if node.grad is None:
        node.grad = g
    else:
        node.grad = node.grad + g


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _make(data, op, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(data, req, op, parents, backward if req else None)


def _binary(op, fn, a, b):
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("add", np.add, a, b)

    def backward(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(g, b.shape))

    return _make(out, "add", (a, b), backward)


def bias_add(x, b):
    """Add a bias vector along the last axis of ``x``."""
    x, b = as_tensor(x), as_tensor(b)
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError("bias_add", x.shape, b.shape)
    return add(x, b)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("sub", np.subtract, a, b)

    def backward(g):
        _acc(a, _unbroadcast(g, a.shape))
        _acc(b, _unbroadcast(-g, b.shape))

    return _make(out, "sub", (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("mul", np.multiply, a, b)

    def backward(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(g * a.data, b.shape))

    return _make(out, "mul", (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _binary("div", np.divide, a, b)

    def backward(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(-g * out / b.data, b.shape))

    return _make(out, "div", (a, b), backward)


def scalar_div(x, c):
    """Divide by a tensor holding a single value (or a python number)."""
    c = as_tensor(c)
    if c.data.size != 1:
        raise ShapeError("scalar_div", as_tensor(x).shape, c.shape)
    return div(x, c.reshape(()) if c.ndim else c)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0.0

    def backward(g):
        _acc(x, g * mask)

    return _make(np.where(mask, x.data, 0.0), "relu", (x,), backward)


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = as_tensor(x)
    mask = x.data > 0.0

    def backward(g):
        _acc(x, np.where(mask, g, slope * g))

    return _make(np.where(mask, x.data, slope * x.data), "leaky_relu", (x,), backward)


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)

    def backward(g):
        _acc(x, g * out)

    return _make(out, "exp", (x,), backward)


def log(x):
    x = as_tensor(x)

    def backward(g):
        _acc(x, g / x.data)

    return _make(np.log(x.data), "log", (x,), backward)


def clip_min(x, lo):
    x = as_tensor(x)
    mask = x.data >= lo

    def backward(g):
        _acc(x, g * mask)

    return _make(np.maximum(x.data, lo), "clip_min", (x,), backward)


# ------------------------------------------------------------------ reductions

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(x, np.broadcast_to(g, x.shape))

    return _make(out, "sum", (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    count = x.data.size // max(out.size, 1)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _acc(x, np.broadcast_to(g / count, x.shape))

    return _make(out, "mean", (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    out = np.exp(z)
    out /= out.sum(axis=axis, keepdims=True)

    def backward(g):
        _acc(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _make(out, "softmax", (x,), backward)


def norm(x, axis=None, keepdims=False):
    """L2 norm of ``x`` over ``axis`` (all entries by default, i.e. Frobenius)."""
    x = as_tensor(x)
    out = np.sqrt(np.sum(x.data * x.data, axis=axis, keepdims=keepdims))

    def backward(g):
        o = out
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
            o = np.expand_dims(o, axis)
        _acc(x, g * x.data / o)

    return _make(out, "norm", (x,), backward)


# -------------------------------------------------------------- linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        if a.requires_grad:
            _acc(a, _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            _acc(b, _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, "matmul", (a, b), backward)


# --------------------------------------------------------------- shape ops

def concat(xs, axis=-1):
    xs = [as_tensor(x) for x in xs]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(x.shape for x in xs)) from None
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        for x, piece in zip(xs, np.split(g, bounds, axis=axis)):
            _acc(x, piece)

    return _make(out, "concat", tuple(xs), backward)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None

    def backward(g):
        _acc(x, g.reshape(x.shape))

    return _make(out, "reshape", (x,), backward)


def swapaxes(x, a1, a2):
    x = as_tensor(x)

    def backward(g):
        _acc(x, np.swapaxes(g, a1, a2))

    return _make(np.swapaxes(x.data, a1, a2), "swapaxes", (x,), backward)


def take(x, idx):
    """Basic or advanced indexing; gradient scatters back with np.add.at."""
    x = as_tensor(x)
    out = x.data[idx]

    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        _acc(x, full)

    return _make(out, "take", (x,), backward)


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (slice, int, type(None), type(Ellipsis))) for p in parts)


def broadcast_to(x, shape):
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError("broadcast_to", x.shape, shape) from None

    def backward(g):
        _acc(x, _unbroadcast(g, x.shape))

    return _make(out, "broadcast_to", (x,), backward)


# --------------------------------------------------------------- fused ops

def attention_softmax(src, dst, slope=LEAKY_SLOPE):
    """alpha[..., j, k] = softmax_k(LeakyReLU(src[..., j] + dst[..., k])).

    Same value as composing ``add``/``leaky_relu``/``softmax`` over the
    broadcast pair grid, but runs as one fused kernel forward and backward.
    """
    src, dst = as_tensor(src), as_tensor(dst)
    if src.shape != dst.shape:
        raise ShapeError("attention_softmax", src.shape, dst.shape)
    lead, n = src.shape[:-1], src.shape[-1]
    s = np.ascontiguousarray(src.data.reshape(-1, n))
    t = np.ascontiguousarray(dst.data.reshape(-1, n))
    kern = _kernels.active
    alpha = kern.attention_forward(s, t, slope)

    def backward(g):
        ds, dt = kern.attention_backward(s, t, alpha, np.ascontiguousarray(g.reshape(alpha.shape)), slope)
        _acc(src, ds.reshape(src.shape))
        _acc(dst, dt.reshape(dst.shape))

    return _make(alpha.reshape(lead + (n, n)), "attention_softmax", (src, dst), backward)
