"""Gated three-stream fusion, reconstruction losses, Adam and early stopping."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .neuralcore import F, Tensor, as_tensor, layers

log = logging.getLogger(__name__)


# -- fusion ---------------------------------------------------------------------------

def add_gated_fusion(store, width, d_latent, rng, name="fusion"):
    layers.add_dense(store, f"{name}.W_3", width, d_latent, rng)
    layers.add_layer_norm(store, f"{name}.LN_3", d_latent)
    layers.add_dense(store, f"{name}.W_4", d_latent, d_latent, rng)
    layers.add_layer_norm(store, f"{name}.LN_4", d_latent)
    layers.add_dense(store, f"{name}.W_g", width, d_latent, rng)
    layers.add_dense(store, f"{name}.W_r", width, d_latent, rng, bias=False)


def fusion_concat(z_graph, z_short, z_long, weights=None):
    """[Z_graph ; flatten(w_1 Z_short) ; flatten(w_2 Z_long)] along the feature axis."""
    z_graph, z_short, z_long = as_tensor(z_graph), as_tensor(z_short), as_tensor(z_long)
    n = z_graph.shape[0]
    if weights is not None:
        z_short = z_short * weights[0]
        z_long = z_long * weights[1]
    return F.concat([z_graph, F.reshape(z_short, (n, -1)), F.reshape(z_long, (n, -1))], axis=1)


def gated_fusion(store, z_graph, z_short, z_long, weights=None, dropout=0.0, rng=None, name="fusion"):
    """Z_final = transform * G + W_r Z_concat with a sigmoid gate G."""
    z = fusion_concat(z_graph, z_short, z_long, weights)
    expected = store[f"{name}.W_3.weight"].shape[1]
    if z.shape[1] != expected:
        raise ValueError(f"fusion input width mismatch: expected {expected}, got {z.shape[1]}")
    hidden = layers.layer_norm(store, f"{name}.LN_3", layers.dense(store, f"{name}.W_3", z))
    act = F.relu(hidden)
    if dropout > 0.0 and rng is not None:
        act = F.dropout(act, dropout, rng)
    transform = layers.layer_norm(store, f"{name}.LN_4", layers.dense(store, f"{name}.W_4", act))
    gate = F.sigmoid(layers.dense(store, f"{name}.W_g", z))
    return transform * gate + layers.dense(store, f"{name}.W_r", z)


# -- losses -----------------------------------------------------------------------------

@dataclass
class LossBreakdown:
    graph_loss: float
    temporal_loss: float
    total: float
    lambda_graph: float = 1.0
    lambda_temporal: float = 1.0


def sample_negatives(n_nodes, edges, count, rng):
    """Uniformly sample ``count`` unordered non-edges (i < j) without replacement."""
    iu, ju = np.triu_indices(n_nodes, 1)
    taken = np.zeros((n_nodes, n_nodes), dtype=bool)
    if len(edges):
        taken[edges[:, 0], edges[:, 1]] = True
        taken[edges[:, 1], edges[:, 0]] = True
    free = np.nonzero(~taken[iu, ju])[0]
    if free.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pick = rng.choice(free, size=min(count, free.size), replace=False)
    pick.sort()
    return np.stack([iu[pick], ju[pick]], axis=1).astype(np.int64)


def graph_loss(z, edges, n_nodes=None, rng=None, negatives=None, ratio=1):
    """Mean binary cross-entropy of sigmoid(z_i . z_j) over edges and sampled non-edges."""
    z = as_tensor(z)
    edges = np.asarray(getattr(edges, "edge_list", edges), dtype=np.int64).reshape(-1, 2)
    if len(edges) == 0:
        raise ValueError("graph has no edges")
    n = z.shape[0] if n_nodes is None else n_nodes
    if negatives is None:
        if ratio < 1:
            raise ValueError("need at least one negative per positive edge")
        rng = np.random.default_rng(0) if rng is None else rng
        negatives = sample_negatives(n, edges, ratio * len(edges), rng)
        if len(negatives) == 0:
            warnings.warn("graph is complete; graph loss uses positive edges only", stacklevel=2)
    negatives = np.asarray(negatives, dtype=np.int64).reshape(-1, 2)
    pairs = np.concatenate([edges, negatives])
    sign = np.concatenate([np.ones(len(edges)), -np.ones(len(negatives))])
    zi = z[pairs[:, 0]]
    zj = z[pairs[:, 1]]
    logits = F.tsum(zi * zj, axis=1)
    return -F.mean(F.log_sigmoid(logits * Tensor(sign)))


def temporal_loss(x, x_hat_short, x_hat_long):
    x = as_tensor(x)
    x_hat_short, x_hat_long = as_tensor(x_hat_short), as_tensor(x_hat_long)
    if x_hat_short.shape != x.shape or x_hat_long.shape != x.shape:
        raise ValueError(f"reconstruction shapes {x_hat_short.shape}, {x_hat_long.shape} != {x.shape}")
    d_s = x_hat_short - x
    d_l = x_hat_long - x
    return 0.5 * (F.mean(d_s * d_s) + F.mean(d_l * d_l))


# -- optimisation -----------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(store, state, lr):
    """One bias-corrected Adam update using the gradients held on ``store``."""
    grads = {}
    for name, p in store.items():
        g = np.zeros_like(p.data) if p.grad is None else p.grad
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name}")
        grads[name] = g
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in store.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class EarlyStopping:
    """Stop once |S_{t+1} - S_t| < tol for ``patience`` consecutive epochs."""

    def __init__(self, tol=1e-4, patience=2):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        if tol <= 0:
            raise ValueError("tolerance must be positive")
        self.tol = tol
        self.patience = patience
        self.previous = None
        self.streak = 0

    def update(self, score):
        score = float("nan") if score is None else float(score)
        if self.previous is not None and abs(score - self.previous) < self.tol:
            self.streak += 1
        else:
            self.streak = 0
        self.previous = score
        return self.streak >= self.patience


def stopping_epoch(scores, tol=1e-4, patience=2):
    """1-based epoch at which the rule fires, or None."""
    rule = EarlyStopping(tol, patience)
    for epoch, s in enumerate(scores, start=1):
        if rule.update(s):
            return epoch
    return None


# -- training loop ------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    max_epochs: int = 200
    patience: int = 2
    tolerance: float = 1e-4
    lambda_graph: float = 1.0
    lambda_temporal: float = 1.0
    negative_ratio: int = 1
    batch_windows: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_epochs < 1 or self.batch_windows < 1 or self.learning_rate <= 0:
            raise ValueError(f"invalid training config {self}")


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_score: float | None
    stopped_early: bool


def _window_seed(seed, epoch, index):
    return np.random.SeedSequence([seed, epoch, index])


def train(model, train_windows, val_windows, config, score_fn, log_path=None):
    """Fit ``model`` window by window with Adam and NAV-score early stopping.

    ``score_fn(model, windows)`` returns the validation score S (or None).
    The model is left holding the parameters of the best-scoring epoch.
    """
    if not train_windows:
        raise ValueError("need at least one training window")
    store = model.store
    state = AdamState()
    rule = EarlyStopping(config.tolerance, config.patience)
    history = []
    best_score, best_epoch, best_state = None, 0, None
    sink = Path(log_path).open("w") if log_path else None
    stopped = False
    try:
        for epoch in range(1, config.max_epochs + 1):
            order = np.random.default_rng(_window_seed(config.seed, epoch, 2**31)).permutation(len(train_windows))
            sums = np.zeros(3)
            for b0 in range(0, len(order), config.batch_windows):
                store.zero_grad()
                batch = order[b0:b0 + config.batch_windows]
                total = None
                for idx in batch:
                    rng = np.random.default_rng(_window_seed(config.seed, epoch, int(idx)))
                    loss, parts = model.loss(train_windows[idx], rng, config, train=True)
                    if not math.isfinite(parts.total):
                        raise FloatingPointError(f"non-finite loss in epoch {epoch}, window {idx}")
                    sums += (parts.graph_loss, parts.temporal_loss, parts.total)
                    total = loss if total is None else total + loss
                (total * (1.0 / len(batch))).backward()
                adam_step(store, state, config.learning_rate)
            means = sums / len(train_windows)
            score = score_fn(model, val_windows) if val_windows else None
            stop = rule.update(score)
            record = {"epoch": epoch, "graph_loss": means[0], "temporal_loss": means[1], "total": means[2],
                      "val_score": score, "stopped_early": bool(stop and epoch < config.max_epochs)}
            history.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
                sink.flush()
            log.info("epoch %d loss %.5f S %s", epoch, means[2], score)
            if score is not None and math.isfinite(score) and (best_score is None or score > best_score):
                best_score, best_epoch, best_state = score, epoch, store.state()
            if stop:
                stopped = epoch < config.max_epochs
                break
    finally:
        if sink:
            sink.close()
    if best_state is None:
        best_epoch = len(history)  # no defined score: keep the final parameters
    else:
        store.load_state(best_state)
    return TrainResult(history, best_epoch, best_score, stopped)


def config_dict(config):
    return asdict(config)
