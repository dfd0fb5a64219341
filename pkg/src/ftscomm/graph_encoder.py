"""Recurrent graph encoder: BiLSTM stages, dynamic dependency, edge attention
with time conditioning, and Set Transformer pooling over time.

All per-timestep work is batched over the T axis: hidden states are kept as
(T, N, h) tensors and attention runs on dense N x N masks.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .neuralcore import F, Tensor, as_tensor, layers
from .neuralcore.params import xavier_uniform


class AttentionMode(str, enum.Enum):
    STATIC = "static"
    BASIC = "basic"
    ENHANCED = "enhanced"
    FULL = "full"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown attention mode {value!r}; expected one of "
                             f"{[m.value for m in cls]}") from None


MODE_ORDER = (AttentionMode.STATIC, AttentionMode.BASIC, AttentionMode.ENHANCED, AttentionMode.FULL)


@dataclass(frozen=True)
class GraphEncoderConfig:
    n_nodes: int
    n_features: int
    window: int
    hidden: int = 32
    n_heads: int = 4
    n_inducing: int = 16
    mode: AttentionMode = AttentionMode.FULL
    time_embedding: str | None = None  # "learned" | "sinusoidal"; None picks by mode

    def __post_init__(self):
        object.__setattr__(self, "mode", AttentionMode.parse(self.mode))
        if self.hidden % self.n_heads:
            raise ValueError(f"hidden width {self.hidden} not divisible by {self.n_heads} heads")
        if not 1 <= self.n_inducing <= 64:
            raise ValueError("number of inducing points must lie in [1, 64]")
        if self.time_embedding not in (None, "learned", "sinusoidal"):
            raise ValueError(f"unknown time embedding {self.time_embedding!r}")

    @property
    def time_kind(self):
        if self.time_embedding is not None:
            return self.time_embedding
        return "learned" if self.mode is AttentionMode.FULL else "sinusoidal"


@dataclass(frozen=True)
class GraphContext:
    """Per-window graph inputs in dense form."""

    mask: np.ndarray  # (N, N) bool, neighbourhoods
    w_static: np.ndarray  # (N, N) normalised thresholded correlations
    edge_values: np.ndarray  # (N, N) B^NAV on edges, 0 elsewhere

    @classmethod
    def from_graph(cls, graph, tau=None):
        tau = graph.tau if tau is None else tau
        mask = graph.neighbor_mask()
        if not mask.any(axis=1).all():
            raise ValueError("graph has a node with an empty neighbourhood")
        corr = graph.correlation if graph.correlation is not None else graph.adjacency
        return cls(mask, static_weights(corr, tau), graph.feature_matrix())

    def permuted(self, perm):
        ix = np.ix_(perm, perm)
        return GraphContext(self.mask[ix], self.w_static[ix], self.edge_values[ix])


@dataclass
class GraphEncoding:
    z_graph: Tensor  # (N, h)
    node_states: Tensor  # (T, N, h), attention output per timestep
    attention: Tensor | None  # (T, n_heads, N, N)
    dependency: Tensor | None  # (T, N, N)


def static_weights(corr, tau):
    """rho_ij / max rho over pairs with rho > tau, zero elsewhere (diagonal excluded)."""
    c = np.array(getattr(corr, "values", corr), dtype=np.float64)
    n = c.shape[0]
    keep = (c > tau) & ~np.eye(n, dtype=bool)
    if not keep.any():
        return np.zeros_like(c)
    return np.where(keep, c / c[keep].max(), 0.0)


def sinusoidal_embedding(T, width):
    t = np.arange(T, dtype=np.float64)[:, None]
    i = np.arange(width // 2 + width % 2, dtype=np.float64)[None, :]
    angle = t / np.power(10000.0, 2.0 * i / width)
    out = np.empty((T, width))
    out[:, 0::2] = np.sin(angle)[:, : (width + 1) // 2]
    out[:, 1::2] = np.cos(angle)[:, : width // 2]
    return out


# -- parameters --------------------------------------------------------------------

def _add_mab(store, name, h, rng):
    # key biases are omitted: softmax cancels a per-query constant shift
    for proj in ("W_q", "W_k", "W_v", "rff"):
        layers.add_dense(store, f"{name}.{proj}", h, h, rng, bias=proj != "W_k")


def add_graph_encoder(store, cfg, rng):
    h, N = cfg.hidden, cfg.n_nodes
    layers.add_bilstm(store, "lstm1", cfg.n_features, h, rng)
    layers.add_bilstm(store, "lstm2", h, h, rng)
    if cfg.mode is AttentionMode.FULL:
        store.add("E_node", rng.normal(0.0, 0.1, (N, h)))
        layers.add_dense(store, "FC_2", h, h, rng)
        layers.add_dense(store, "W_g", h, h, rng)
        layers.add_dense(store, "W_b", h, h, rng, bias=False)
        layers.add_dense(store, "W_k_time", h, h, rng, bias=False)
        layers.add_dense(store, "W_v_time", h, h, rng, bias=False)
    if cfg.time_kind == "learned" and cfg.mode in (AttentionMode.ENHANCED, AttentionMode.FULL):
        store.add("time_embed", rng.normal(0.0, 0.1, (cfg.window, h)))
    layers.add_dense(store, "W_V", h, h, rng)
    if cfg.mode is not AttentionMode.STATIC:
        layers.add_dense(store, "W_Q", h, h, rng)
        layers.add_dense(store, "W_K", h, h, rng, bias=False)
        layers.add_dense(store, "W_O", h, h, rng)
    if cfg.mode in (AttentionMode.ENHANCED, AttentionMode.FULL):
        store.add("W_edge", xavier_uniform((1, h), rng))
        store.add("W_edge_V", xavier_uniform((1, h), rng))
    store.add("inducing", xavier_uniform((cfg.n_inducing, h), rng))
    store.add("seed", xavier_uniform((1, h), rng))
    _add_mab(store, "isab.mab0", h, rng)
    _add_mab(store, "isab.mab1", h, rng)
    _add_mab(store, "pma.mab", h, rng)


# -- stages -------------------------------------------------------------------------

def bilstm_stage1(store, x):
    """(N, D, T) features -> (T, N, h) with forward and backward passes summed."""
    x = as_tensor(x)
    return layers.bilstm(store, "lstm1", F.transpose(x, (2, 0, 1)))


def bilstm_stage2(store, h1):
    return layers.bilstm(store, "lstm2", as_tensor(h1))


def dynamic_dependency(store, h1, e_node):
    """Per t: V = tanh(E * FC_2(H1_t)), D_t = ReLU(V V^T), H1'_t = D_t H1_t + H1_t.

    Returns (H1', D) with D of shape (T, N, N).
    """
    h1 = as_tensor(h1)
    v = F.tanh(as_tensor(e_node) * layers.dense(store, "FC_2", h1))
    d = F.relu(F.matmul(v, F.transpose(v, (0, 2, 1))))
    return F.matmul(d, h1) + h1, d


def time_embedding(store, cfg, T=None):
    T = cfg.window if T is None else T
    if cfg.time_kind == "learned":
        table = store["time_embed"]
        if T > table.shape[0]:
            raise ValueError(f"learned time table covers {table.shape[0]} steps, window has {T}")
        return table[:T] if T < table.shape[0] else table
    return Tensor(sinusoidal_embedding(T, cfg.hidden))


def temporal_modulation(store, h2, e):
    """H~ = H2 * sigmoid(W_g e) + W_b e, with e broadcast over nodes.

    h2: (T, N, h); e: (T, h).
    """
    T, h = e.shape
    gate = F.reshape(F.sigmoid(layers.dense(store, "W_g", e)), (T, 1, h))
    shift = F.reshape(layers.dense(store, "W_b", e), (T, 1, h))
    return as_tensor(h2) * gate + shift


def _edge_terms(store, q, ctx, n_heads):
    """Logit and value contributions of the edge projections of B.

    With K_ij = K_j + W_edge B_ij the extra logit is B_ij (q_i . W_edge) per head.
    """
    dh = q.shape[-1]
    w_e = F.reshape(store["W_edge"], (n_heads, dh, 1))
    qe = F.matmul(q, w_e)  # (T, nh, N, 1)
    return qe * Tensor(ctx.edge_values) * (1.0 / np.sqrt(dh))


def edge_attention(store, cfg, h2, ctx, e=None, h_mod=None, static_bias=True):
    """Neighbourhood attention over the dense mask, batched across timesteps.

    Returns (output (T, N, h), attention weights or None).
    """
    mode = cfg.mode
    h2 = as_tensor(h2)
    T, N, h = h2.shape
    nh = cfg.n_heads
    if mode is AttentionMode.STATIC:
        v = layers.dense(store, "W_V", h2)
        return F.matmul(Tensor(ctx.w_static), v), None

    if mode is AttentionMode.FULL:
        if e is None or h_mod is None:
            raise ValueError("full mode needs the time embedding and modulated states")
        q = layers.dense(store, "W_Q", h_mod)
        k = layers.dense(store, "W_K", h2) + F.reshape(layers.dense(store, "W_k_time", e), (T, 1, h))
        v = layers.dense(store, "W_V", h2) + F.reshape(layers.dense(store, "W_v_time", e), (T, 1, h))
    else:
        q = layers.dense(store, "W_Q", h2)
        if mode is AttentionMode.ENHANCED:
            q = q * F.reshape(e, (T, 1, h))
        k = layers.dense(store, "W_K", h2)
        v = layers.dense(store, "W_V", h2)

    qh, kh, vh = (layers.split_heads(t, nh) for t in (q, k, v))  # (T, nh, N, dh)
    bias = None
    edges = mode in (AttentionMode.ENHANCED, AttentionMode.FULL)
    if mode is AttentionMode.BASIC and static_bias:
        bias = Tensor(ctx.w_static)
    if edges:
        bias = _edge_terms(store, qh, ctx, nh)
    out, alpha = layers.softmax_attention(qh, kh, vh, mask=ctx.mask, bias=bias)
    if edges:
        # V_ij = V_j + W_edge_V B_ij contributes (sum_j alpha_ij B_ij) W_edge_V
        ab = F.tsum(alpha * Tensor(ctx.edge_values), axis=-1, keepdims=True)  # (T, nh, N, 1)
        out = out + ab * F.reshape(store["W_edge_V"], (nh, 1, h // nh))
    out = layers.dense(store, "W_O", layers.merge_heads(out))
    return out, alpha


# -- set transformer ---------------------------------------------------------------------

def mab(store, name, x, y, n_heads):
    """Multihead attention block: H = X W_q + MHA(X, Y, Y); out = H + ReLU(rFF(H))."""
    q = layers.dense(store, f"{name}.W_q", x)
    k = layers.dense(store, f"{name}.W_k", y)
    v = layers.dense(store, f"{name}.W_v", y)
    att, _ = layers.softmax_attention(layers.split_heads(q, n_heads), layers.split_heads(k, n_heads),
                                      layers.split_heads(v, n_heads))
    hmid = q + layers.merge_heads(att)
    return hmid + F.relu(layers.dense(store, f"{name}.rff", hmid))


def set_transformer_aggregate(store, o, n_heads):
    """Pool (N, T, h) over the time axis into (N, h) via ISAB then PMA."""
    o = as_tensor(o)
    N, T, h = o.shape
    h_i = mab(store, "isab.mab0", store["inducing"], o, n_heads)  # (N, K, h)
    h_out = mab(store, "isab.mab1", o, h_i, n_heads)  # (N, T, h)
    z = mab(store, "pma.mab", store["seed"], h_out, n_heads)  # (N, 1, h)
    return F.reshape(z, (N, h))


# -- full encoder ---------------------------------------------------------------------------

def encode_graph(store, cfg, x, ctx):
    """Run the graph encoder on standardised features x (N, D, T)."""
    x = as_tensor(x)
    N, D, T = x.shape
    if N != cfg.n_nodes or D != cfg.n_features:
        raise ValueError(f"features {x.shape} do not match encoder config ({cfg.n_nodes}, {cfg.n_features}, T)")
    mode = cfg.mode
    h1 = bilstm_stage1(store, x)
    dep = None
    if mode is AttentionMode.FULL:
        h1, dep = dynamic_dependency(store, h1, store["E_node"])
    h2 = bilstm_stage2(store, h1)
    e = h_mod = None
    if mode in (AttentionMode.ENHANCED, AttentionMode.FULL):
        e = time_embedding(store, cfg, T)
    if mode is AttentionMode.FULL:
        h_mod = temporal_modulation(store, h2, e)
    out, alpha = edge_attention(store, cfg, h2, ctx, e=e, h_mod=h_mod)
    z = set_transformer_aggregate(store, F.transpose(out, (1, 0, 2)), cfg.n_heads)
    return GraphEncoding(z, out, alpha, dep)
