"""Minimal reverse-mode autodiff over float64 numpy arrays.

A :class:`Tensor` records the operation that produced it and a closure that
pushes the output gradient back to its parents.  Calling ``backward()`` on a
scalar walks the recorded graph in reverse topological order.

Only the primitives the community-detection model needs are provided.  The
heavier ones (1-D convolution, transposed convolution, the LSTM recurrence)
are single graph nodes with hand-derived backward passes, which keeps the
graph small enough for desk-scale training.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit
from scipy.special import erf

DTYPE = np.float64

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    # make ndarray <op> Tensor dispatch to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, name=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    # -- basic protocol -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.asarray(grad, dtype=DTYPE))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _node(data, parents, backward):
    parents = tuple(parents)
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, _parents=parents, _backward=backward)


# -- elementwise arithmetic ---------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _node(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * out / b.data, b.shape))

    return _node(out, (a, b), bw)


def neg(a):
    def bw(g):
        a._accumulate(-g)

    return _node(-a.data, (a,), bw)


def power(a, p):
    p = float(p)
    out = a.data ** p

    def bw(g):
        a._accumulate(g * p * a.data ** (p - 1.0))

    return _node(out, (a,), bw)


def exp(a):
    out = np.exp(a.data)

    def bw(g):
        a._accumulate(g * out)

    return _node(out, (a,), bw)


def log(a):
    def bw(g):
        a._accumulate(g / a.data)

    return _node(np.log(a.data), (a,), bw)


# -- activations --------------------------------------------------------

def _sigmoid(x):
    return expit(x)


def sigmoid(a):
    out = _sigmoid(a.data)

    def bw(g):
        a._accumulate(g * out * (1.0 - out))

    return _node(out, (a,), bw)


def log_sigmoid(a):
    x = a.data
    out = -(np.maximum(-x, 0.0) + np.log1p(np.exp(-np.abs(x))))

    def bw(g):
        a._accumulate(g * _sigmoid(-x))

    return _node(out, (a,), bw)


def tanh(a):
    out = np.tanh(a.data)

    def bw(g):
        a._accumulate(g * (1.0 - out * out))

    return _node(out, (a,), bw)


def relu(a):
    mask = a.data > 0

    def bw(g):
        a._accumulate(g * mask)

    return _node(a.data * mask, (a,), bw)


def gelu(a):
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))

    def bw(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        a._accumulate(g * (cdf + x * pdf))

    return _node(x * cdf, (a,), bw)


# -- reductions and shape ops --------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _node(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axis(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return tsum(a, axes, keepdims) * (1.0 / n)


def tmax(a, axis, keepdims=False):
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % a.ndim
    idx = np.argmax(a.data, axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis)
    if not keepdims:
        out = np.squeeze(out, axis)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis)
        a._accumulate(full)

    return _node(out, (a,), bw)


def reshape(a, shape):
    def bw(g):
        a._accumulate(g.reshape(a.shape))

    return _node(a.data.reshape(shape), (a,), bw)


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = np.argsort(axes)

    def bw(g):
        a._accumulate(np.transpose(g, inv))

    return _node(np.transpose(a.data, axes), (a,), bw)


def getitem(a, idx):
    def bw(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        a._accumulate(full)

    return _node(a.data[idx], (a,), bw)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return _node(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        for k, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, k, axis=axis))

    return _node(np.stack([t.data for t in tensors], axis=axis), tensors, bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least two dimensions")

    def bw(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

    return _node(a.data @ b.data, (a, b), bw)


# -- composite primitives --------------------------------------------------

def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get zero weight."""
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ValueError("softmax over an empty neighbourhood")
        x = np.where(mask, x, -np.inf)
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        a._accumulate(out * (g - (g * out).sum(axis=axis, keepdims=True)))

    return _node(out, (a,), bw)


def layer_norm(a, gain=None, bias=None, eps=1e-5):
    mu = mean(a, -1, keepdims=True)
    xc = a - mu
    var = mean(xc * xc, -1, keepdims=True)
    y = xc * power(var + eps, -0.5)
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y


def dropout(a, rate, rng):
    if rate <= 0.0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return a * keep


# -- convolutions -----------------------------------------------------------

def conv_out_len(length, kernel, stride):
    return (length - kernel) // stride + 1


def conv1d(x, w, b=None, stride=1):
    """Valid (unpadded) 1-D cross-correlation.

    x: (B, C_in, L), w: (C_out, C_in, k), b: (C_out,) -> (B, C_out, L').
    """
    x, w = as_tensor(x), as_tensor(w)
    B, C_in, L = x.shape
    C_out, C_in_w, k = w.shape
    if C_in_w != C_in:
        raise ValueError(f"conv1d channel mismatch: input has {C_in}, kernel expects {C_in_w}")
    if L < k:
        raise ValueError(f"conv1d input length {L} shorter than kernel {k}")
    L_out = conv_out_len(L, k, stride)
    idx = stride * np.arange(L_out)[:, None] + np.arange(k)[None, :]
    cols = x.data[:, :, idx]  # B, C_in, L_out, k
    cols2 = cols.transpose(0, 2, 1, 3).reshape(B, L_out, C_in * k)
    w2 = w.data.reshape(C_out, C_in * k)
    out = (cols2 @ w2.T).transpose(0, 2, 1)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
        parents.append(b)

    def bw(g):
        gt = g.transpose(0, 2, 1)  # B, L_out, C_out
        if w.requires_grad:
            w._accumulate((gt.reshape(-1, C_out).T @ cols2.reshape(-1, C_in * k)).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            gcols = (gt @ w2).reshape(B, L_out, C_in, k)
            gx = np.zeros_like(x.data)
            span = stride * (L_out - 1) + 1
            for j in range(k):
                gx[:, :, j:j + span:stride] += gcols[:, :, :, j].transpose(0, 2, 1)
            x._accumulate(gx)

    return _node(out, parents, bw)


def conv1d_transpose(x, w, b=None, stride=1):
    """Transposed 1-D convolution, the adjoint of :func:`conv1d`.

    x: (B, C_in, L), w: (C_in, C_out, k) -> (B, C_out, (L - 1) * stride + k).
    """
    x, w = as_tensor(x), as_tensor(w)
    B, C_in, L = x.shape
    C_in_w, C_out, k = w.shape
    if C_in_w != C_in:
        raise ValueError(f"conv1d_transpose channel mismatch: input has {C_in}, kernel expects {C_in_w}")
    L_out = (L - 1) * stride + k
    w2 = w.data.reshape(C_in, C_out * k)
    xt = x.data.transpose(0, 2, 1)  # B, L, C_in
    parts = (xt @ w2).reshape(B, L, C_out, k)
    out = np.zeros((B, C_out, L_out))
    span = stride * (L - 1) + 1
    for j in range(k):
        out[:, :, j:j + span:stride] += parts[:, :, :, j].transpose(0, 2, 1)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[None, :, None]
        parents.append(b)

    def bw(g):
        idx = stride * np.arange(L)[:, None] + np.arange(k)[None, :]
        gparts = g[:, :, idx].transpose(0, 2, 1, 3).reshape(B, L, C_out * k)
        if w.requires_grad:
            w._accumulate((xt.reshape(-1, C_in).T @ gparts.reshape(-1, C_out * k)).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2)))
        if x.requires_grad:
            x._accumulate((gparts @ w2.T).transpose(0, 2, 1))

    return _node(out, parents, bw)


# -- recurrence ---------------------------------------------------------------

def lstm(x, w_ih, w_hh, b, reverse=False):
    """Single-direction LSTM over a full sequence with zero initial state.

    x: (T, B, in); w_ih: (4h, in); w_hh: (4h, h); b: (4h,).  Gate order is
    input, forget, cell, output.  Returns hidden states (T, B, h) indexed by
    time, whichever direction the recurrence ran.
    """
    x, w_ih, w_hh, b = as_tensor(x), as_tensor(w_ih), as_tensor(w_hh), as_tensor(b)
    T, B, _ = x.shape
    H = w_hh.shape[1]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    xz = x.data @ w_ih.data.T + b.data  # T, B, 4H
    hs = np.zeros((T, B, H))
    cs = np.zeros((T, B, H))
    gates = np.zeros((T, B, 4 * H))
    h_prev = np.zeros((B, H))
    c_prev = np.zeros((B, H))
    h_before = np.zeros((T, B, H))  # state entering step t
    c_before = np.zeros((T, B, H))
    w_hh_t = w_hh.data.T
    for t in steps:
        z = xz[t] + h_prev @ w_hh_t
        gt = expit(z)
        gt[:, 2 * H:3 * H] = np.tanh(z[:, 2 * H:3 * H])
        i, f, gg, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
        c = f * c_prev + i * gg
        h = o * np.tanh(c)
        gates[t] = gt
        h_before[t], c_before[t] = h_prev, c_prev
        cs[t], hs[t] = c, h
        h_prev, c_prev = h, c

    def bw(g):
        dz_all = np.zeros((T, B, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        tanh_c = np.tanh(cs)
        for t in reversed(list(steps)):
            gt = gates[t]
            i, f, gg, o = gt[:, :H], gt[:, H:2 * H], gt[:, 2 * H:3 * H], gt[:, 3 * H:]
            tc = tanh_c[t]
            dh = g[t] + dh_next
            dc = dc_next + dh * o * (1.0 - tc * tc)
            dz = dz_all[t]
            dz[:, :H] = dc * gg * i * (1.0 - i)
            dz[:, H:2 * H] = dc * c_before[t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dc * i * (1.0 - gg * gg)
            dz[:, 3 * H:] = dh * tc * o * (1.0 - o)
            dh_next = dz @ w_hh.data
            dc_next = dc * f
        if w_hh.requires_grad:
            w_hh._accumulate(dz_all.reshape(-1, 4 * H).T @ h_before.reshape(-1, H))
        if w_ih.requires_grad:
            w_ih._accumulate(dz_all.reshape(-1, 4 * H).T @ x.data.reshape(-1, x.shape[2]))
        if b.requires_grad:
            b._accumulate(dz_all.sum(axis=(0, 1)))
        if x.requires_grad:
            x._accumulate(dz_all @ w_ih.data)

    return _node(hs, (x, w_ih, w_hh, b), bw)
