"""Layer-level helpers composed from the tensor primitives."""

from __future__ import annotations

import numpy as np

from . import tensor as F
from .params import orthogonal, xavier_uniform


def add_dense(store, name, n_in, n_out, rng, bias=True):
    store.add(f"{name}.weight", xavier_uniform((n_out, n_in), rng))
    if bias:
        store.add(f"{name}.bias", np.zeros(n_out))


def dense(store, name, x):
    y = F.matmul(x, F.transpose(store[f"{name}.weight"]))
    bias = f"{name}.bias"
    if bias in store:
        y = y + store[bias]
    return y


def add_lstm(store, name, n_in, hidden, rng):
    store.add(f"{name}.w_ih", xavier_uniform((4 * hidden, n_in), rng))
    store.add(f"{name}.w_hh", orthogonal((4 * hidden, hidden), rng))
    store.add(f"{name}.bias", np.zeros(4 * hidden))


def add_bilstm(store, name, n_in, hidden, rng):
    add_lstm(store, f"{name}.fwd", n_in, hidden, rng)
    add_lstm(store, f"{name}.bwd", n_in, hidden, rng)


def bilstm(store, name, x, concat=False):
    """Bidirectional LSTM on (T, B, in); directions summed to width h by default."""
    fwd = F.lstm(x, store[f"{name}.fwd.w_ih"], store[f"{name}.fwd.w_hh"], store[f"{name}.fwd.bias"])
    bwd = F.lstm(x, store[f"{name}.bwd.w_ih"], store[f"{name}.bwd.w_hh"], store[f"{name}.bwd.bias"],
                 reverse=True)
    if concat:
        return F.concat([fwd, bwd], axis=-1)
    return fwd + bwd


def add_layer_norm(store, name, width):
    store.add(f"{name}.gain", np.ones(width))
    store.add(f"{name}.bias", np.zeros(width))


def layer_norm(store, name, x):
    return F.layer_norm(x, store[f"{name}.gain"], store[f"{name}.bias"])


def split_heads(x, n_heads):
    """(..., L, d) -> (..., n_heads, L, d / n_heads)."""
    *lead, L, d = x.shape
    if d % n_heads:
        raise ValueError(f"width {d} not divisible by {n_heads} heads")
    y = F.reshape(x, (*lead, L, n_heads, d // n_heads))
    nd = len(lead)
    axes = tuple(range(nd)) + (nd + 1, nd, nd + 2)
    return F.transpose(y, axes)


def merge_heads(x):
    """(..., n_heads, L, dh) -> (..., L, n_heads * dh)."""
    *lead, nh, L, dh = x.shape
    nd = len(lead)
    axes = tuple(range(nd)) + (nd + 1, nd, nd + 2)
    return F.reshape(F.transpose(x, axes), (*lead, L, nh * dh))


def softmax_attention(q, k, v, mask=None, bias=None):
    """Scaled dot-product attention over the second-to-last axis of k/v.

    ``mask`` (broadcastable to the score shape) restricts each query to its
    neighbourhood; ``bias`` is added to the scaled logits.
    Returns (output, attention weights).
    """
    scores = F.matmul(q, F.transpose(k, _swap_last(k.ndim))) * (1.0 / np.sqrt(q.shape[-1]))
    if bias is not None:
        scores = scores + bias
    alpha = F.softmax(scores, axis=-1, mask=mask)
    return F.matmul(alpha, v), alpha


def _swap_last(ndim):
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
