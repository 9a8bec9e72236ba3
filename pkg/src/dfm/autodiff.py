"""Minimal reverse-mode autodiff over numpy arrays.

A Tensor wraps an ndarray plus an optional backward closure. backward()
walks the tape in reverse topological order and accumulates gradients into
.grad. Only the operations the flow-matching transformer needs exist here;
the fused numerical kernels (layernorm, softmax, silu, gelu, rope) come
from dfm.kernels and register as single tape nodes, so both kernel
backends share one graph definition.

Gradient buffers are never mutated in place: the first contribution is
stored by reference, later ones reallocate (grad = grad + g). Backward
closures therefore may return views; nothing downstream writes into them.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import kernels as K

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (used by samplers/eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bwd")

    def __init__(self, data, requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, bwd) -> Tensor:
    if _grad_enabled and any(p.requires_grad for p in parents):
        t = Tensor(data, requires_grad=True)
        t._parents = tuple(parents)
        t._bwd = bwd
        return t
    return Tensor(data)


def _accum(t: Tensor, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Sum g down to `shape`, undoing numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(root: Tensor, grad=None):
    """Accumulate d(root)/d(leaf) into .grad over the whole tape."""
    if not root.requires_grad:
        raise ValueError("backward() on a tensor that requires no grad")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        t, done = stack.pop()
        if done:
            topo.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        for p in t._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.data) if grad is None else grad
    for t in reversed(topo):
        if t._bwd is not None:
            t._bwd(t.grad)


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _node(out, (a, b), bwd)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def bwd(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _node(out, (a, b), bwd)


def neg(a):
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, -g)

    return _node(-a.data, (a,), bwd)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def bwd(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _node(out, (a, b), bwd)


def scale(a, s: float):
    """a * s for a python scalar s (no tensor wrapping, keeps dtype)."""
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g * s)

    return _node(a.data * s, (a,), bwd)


def shift(a, s: float):
    """a + s for a python scalar s (no tensor wrapping, keeps dtype)."""
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g)

    return _node(a.data + s, (a,), bwd)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        _accum(a, _unbroadcast(ga, a.data.shape))
        _accum(b, _unbroadcast(gb, b.data.shape))

    return _node(out, (a, b), bwd)


# ---------------------------------------------------------------------------
# shape ops


def reshape(a, shape):
    a = _as_tensor(a)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _node(a.data.reshape(shape), (a,), bwd)


def transpose(a, axes):
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _node(a.data.transpose(axes), (a,), bwd)


def sum_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    if axis is None:
        axes = tuple(range(a.data.ndim))
    elif isinstance(axis, int):
        axes = (axis % a.data.ndim,)
    else:
        axes = tuple(ax % a.data.ndim for ax in axis)

    def bwd(g):
        if not keepdims:
            kshape = list(a.data.shape)
            for ax in axes:
                kshape[ax] = 1
            g = g.reshape(kshape)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _node(out, (a,), bwd)


def mean_(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        n = a.data.size
    elif isinstance(axis, int):
        n = a.data.shape[axis]
    else:
        n = 1
        for ax in axis:
            n *= a.data.shape[ax]
    return scale(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def slice_axis(a, axis, start, stop):
    a = _as_tensor(a)
    nd = a.data.ndim
    axis = axis % nd
    idx = tuple(slice(start, stop) if i == axis else slice(None) for i in range(nd))
    out = a.data[idx]

    def bwd(g):
        buf = np.zeros(a.data.shape, dtype=g.dtype)
        buf[idx] = g
        _accum(a, buf)

    return _node(out, (a,), bwd)


def take_rows(table, index):
    """table[index] for a (rows, d) table and an integer index array."""
    table = _as_tensor(table)
    index = np.asarray(index)
    out = table.data[index]

    def bwd(g):
        buf = np.zeros(table.data.shape, dtype=g.dtype)
        np.add.at(buf, index, g)
        _accum(table, buf)

    return _node(out, (table,), bwd)


# ---------------------------------------------------------------------------
# fused kernel nodes


def layernorm(a, eps=1e-6):
    """LayerNorm over the last axis, no affine parameters."""
    a = _as_tensor(a)
    y, mean, rstd = K.layernorm_fwd(a.data, eps)

    def bwd(g):
        _accum(a, K.layernorm_bwd(g, a.data, mean, rstd))

    return _node(y, (a,), bwd)


def softmax_last(a):
    a = _as_tensor(a)
    y = K.softmax_fwd(a.data)

    def bwd(g):
        _accum(a, K.softmax_bwd(g, y))

    return _node(y, (a,), bwd)


def silu(a):
    a = _as_tensor(a)
    y = K.silu_fwd(a.data)

    def bwd(g):
        _accum(a, K.silu_bwd(g, a.data))

    return _node(y, (a,), bwd)


def gelu(a):
    a = _as_tensor(a)
    y, th = K.gelu_fwd(a.data)

    def bwd(g):
        _accum(a, K.gelu_bwd(g, a.data, th))

    return _node(y, (a,), bwd)


def rope(a, cos, sin):
    """Rotary embedding on (..., tokens, head_dim); cos/sin are constants."""
    a = _as_tensor(a)
    y = K.rope_fwd(a.data, cos, sin)

    def bwd(g):
        _accum(a, K.rope_bwd(g, cos, sin))

    return _node(y, (a,), bwd)


# ---------------------------------------------------------------------------
# conveniences


def linear(x, w, b=None):
    """x @ w (+ b). Collapses leading axes to one GEMM, then restores them."""
    x = _as_tensor(x)
    lead = x.data.shape[:-1]
    h = x if x.data.ndim == 2 else reshape(x, (-1, x.data.shape[-1]))
    h = matmul(h, w)
    if b is not None:
        h = add(h, b)
    if len(lead) != 1:
        h = reshape(h, lead + (h.data.shape[-1],))
    return h


def sse(a, axis=None):
    """Sum of squared entries (over `axis`, or all)."""
    return sum_(mul(a, a), axis=axis)


def zero_grads(params):
    for p in params.values():
        p.grad = None
