"""Spectral clustering of embeddings and correlation-based cluster quality."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from sklearn.cluster import KMeans

from .graphbuild import _pearson_rows
from .marketdata import compute_nav

log = logging.getLogger(__name__)

W_INTRA, W_INTER = 0.1, 0.9


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray
    k: int
    window: int | None = None
    eigengaps: np.ndarray | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        if labels.size and set(np.unique(labels).tolist()) != set(range(self.k)):
            raise ValueError(f"labels must cover exactly 0..{self.k - 1}")


@dataclass
class MetricsReport:
    intra_corr: float | None
    inter_corr: float | None
    inter_dissim: float | None
    k: int
    signed: bool = False

    def to_dict(self):
        return {"k": self.k, "intra_corr": self.intra_corr, "inter_corr": self.inter_corr,
                "inter_dissim": self.inter_dissim, "signed": self.signed}


@dataclass
class StabilityProfile:
    counts: np.ndarray
    mean: float
    spikes: list = field(default_factory=list)  # index t where |K_t - K_{t-1}| >= 2


def canonical_labels(labels):
    """Relabel clusters in order of first appearance."""
    labels = np.asarray(labels)
    mapping = {}
    out = np.empty(len(labels), dtype=np.int64)
    for i, v in enumerate(labels.tolist()):
        out[i] = mapping.setdefault(v, len(mapping))
    return out


# -- spectral clustering ----------------------------------------------------------

def _affinity(z):
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * z @ z.T, 0.0)
    np.fill_diagonal(d2, 0.0)
    iu = np.triu_indices(len(z), 1)
    sigma2 = float(np.median(d2[iu]))
    if sigma2 <= 0:
        positive = d2[iu][d2[iu] > 0]
        sigma2 = float(positive.min()) if positive.size else 0.0
    w = np.exp(-d2 / sigma2)
    np.fill_diagonal(w, 0.0)
    return w


def spectral_cluster(z, k_range=(2, 15), seed=0, n_init=10, window=None):
    """Gaussian-kernel spectral clustering with eigengap model selection.

    Uses the symmetric normalised Laplacian, picks K at the largest gap
    lambda_{K+1} - lambda_K with K in ``k_range`` (ties to the smaller K), then
    runs seeded k-means++ on the row-normalised leading eigenvectors.
    """
    z = np.asarray(getattr(z, "data", z), dtype=np.float64)
    n = z.shape[0]
    k_min, k_max = k_range
    if k_min < 2 or k_max < k_min:
        raise ValueError(f"invalid k range {k_range}")
    if n < k_min:
        raise ValueError(f"{n} points cannot form {k_min} clusters")
    if np.ptp(z, axis=0).max(initial=0.0) == 0.0:
        warnings.warn("all embeddings identical; returning a single cluster", stacklevel=2)
        return ClusterAssignment(np.zeros(n, dtype=np.int64), 1, window)
    w = _affinity(z)
    deg = w.sum(axis=1)
    inv = 1.0 / np.sqrt(np.maximum(deg, 1e-300))
    lap = np.eye(n) - inv[:, None] * w * inv[None, :]
    lap = 0.5 * (lap + lap.T)
    vals, vecs = eigh(lap)
    k_max = min(k_max, n - 1)
    ks = np.arange(k_min, max(k_max, k_min) + 1)
    gaps = vals[ks] - vals[ks - 1]
    k = int(ks[int(np.argmax(gaps))])
    emb = vecs[:, :k]
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    emb = emb / np.where(norms > 0, norms, 1.0)
    km = KMeans(n_clusters=k, init="k-means++", n_init=n_init, random_state=seed)
    labels = canonical_labels(km.fit_predict(emb))
    k_found = int(labels.max()) + 1
    return ClusterAssignment(labels, k_found, window, gaps)


# -- correlation metrics ----------------------------------------------------------------

def multi_feature_rho(x, signed=False):
    """Pairwise rho_ij = mean_d |Corr(X_i^d, X_j^d)| for x of shape (N, D, T).

    A pair of (T, D) blocks may be passed as a list of two arrays.
    """
    if isinstance(x, (list, tuple)):
        a, b = (np.asarray(v, dtype=np.float64) for v in x)
        x = np.stack([a.T, b.T])
        return float(multi_feature_rho(x, signed)[0, 1])
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    N, D, T = x.shape
    if T < 3:
        raise ValueError("need at least three timesteps")
    rho = np.zeros((N, N))
    for d in range(D):
        c = _pearson_rows(x[:, d, :])
        rho += c if signed else np.abs(c)
    rho /= D
    np.fill_diagonal(rho, 1.0)
    return rho


def nav_correlation(prices):
    values = getattr(prices, "values", prices)
    return _pearson_rows(compute_nav(np.asarray(values, dtype=np.float64), 0).values.T)


def _labels(assignment):
    return np.asarray(getattr(assignment, "labels", assignment), dtype=np.int64)


def intra_inter(labels, rho):
    """(IntraCorr, InterCorr) for a pairwise matrix; None where undefined."""
    labels = _labels(labels)
    groups = [np.nonzero(labels == c)[0] for c in np.unique(labels)]
    intra = []
    for g in groups:
        if len(g) < 2:
            continue
        block = rho[np.ix_(g, g)]
        intra.append(block[np.triu_indices(len(g), 1)].mean())
    inter = []
    for a in range(len(groups)):
        for b in range(a + 1, len(groups)):
            inter.append(rho[np.ix_(groups[a], groups[b])].mean())
    return (float(np.mean(intra)) if intra else None,
            float(np.mean(inter)) if inter else None)


def clustering_metrics(assignment, features, signed=False):
    """IntraCorr / InterCorr / InterDissim on multi-feature correlations."""
    labels = _labels(assignment)
    intra, inter = intra_inter(labels, multi_feature_rho(features, signed))
    k = len(np.unique(labels))
    return MetricsReport(intra, inter, None if inter is None else 1.0 - inter, k, signed)


def nav_metrics(assignment, prices, signed=True):
    labels = _labels(assignment)
    rho = nav_correlation(prices)
    intra, inter = intra_inter(labels, rho if signed else np.abs(rho))
    k = len(np.unique(labels))
    return MetricsReport(intra, inter, None if inter is None else 1.0 - inter, k, signed)


def composite(s_intra, s_inter, w_intra=W_INTRA, w_inter=W_INTER):
    return w_intra * s_intra + w_inter * s_inter


def nav_composite_score(assignment, prices, w_intra=W_INTRA, w_inter=W_INTER):
    """S = w_intra * S_intra + w_inter * (1 - mean cross-cluster NAV correlation).

    Returns None when the partition leaves either term undefined.
    """
    m = nav_metrics(assignment, prices, signed=True)
    if m.intra_corr is None or m.inter_dissim is None:
        return None
    return composite(m.intra_corr, m.inter_dissim, w_intra, w_inter)


# -- partition agreement and stability -----------------------------------------------------

def _comb2(x):
    x = np.asarray(x, dtype=np.float64)
    return x * (x - 1.0) / 2.0


def adjusted_rand_index(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must have equal length")
    n = len(a)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1.0)
    index = _comb2(table).sum()
    sa = _comb2(table.sum(axis=1)).sum()
    sb = _comb2(table.sum(axis=0)).sum()
    total = _comb2(n)
    expected = sa * sb / total if total else 0.0
    max_index = 0.5 * (sa + sb)
    if max_index == expected:
        return 1.0
    return float((index - expected) / (max_index - expected))


def stability_profile(assignments, spike=2):
    counts = np.array([getattr(a, "k", a) for a in assignments], dtype=np.int64)
    if counts.size == 0:
        raise ValueError("need at least one window")
    if np.any(counts < 1):
        raise ValueError("cluster counts must be >= 1")
    jumps = np.abs(np.diff(counts))
    spikes = [int(t) + 1 for t in np.nonzero(jumps >= spike)[0]]
    return StabilityProfile(counts, float(counts.mean()), spikes)
