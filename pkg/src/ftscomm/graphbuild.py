"""Per-window correlation graph and NAV modularity edge features."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .marketdata import PriceMatrix, compute_nav

log = logging.getLogger(__name__)

GRAPH_FORMAT = "ftscomm-graph"
GRAPH_VERSION = 1


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray


@dataclass(frozen=True)
class ModularityMatrix:
    values: np.ndarray
    degrees: np.ndarray
    total_weight: float  # m, half the summed weight
    nav_corr: np.ndarray  # A^NAV with zero diagonal


@dataclass(frozen=True)
class WindowGraph:
    adjacency: np.ndarray
    edge_list: np.ndarray  # (E, 2) int pairs with i < j
    tau: float
    delta: float
    correlation: np.ndarray | None = None
    edge_features: np.ndarray | None = None  # (E,) aligned with edge_list

    @property
    def n_nodes(self):
        return self.adjacency.shape[0]

    @property
    def n_edges(self):
        return len(self.edge_list)

    def neighbor_mask(self):
        return self.adjacency > 0

    def feature(self, i, j):
        if self.edge_features is None:
            raise ValueError("graph has no edge features attached")
        a, b = min(i, j), max(i, j)
        hit = np.nonzero((self.edge_list[:, 0] == a) & (self.edge_list[:, 1] == b))[0]
        if not len(hit):
            raise KeyError(f"({i}, {j}) is not an edge")
        return float(self.edge_features[hit[0]])

    def feature_matrix(self):
        """Dense N x N matrix holding edge features on edges and 0 elsewhere."""
        out = np.zeros_like(self.adjacency)
        if self.edge_features is not None and self.n_edges:
            i, j = self.edge_list.T
            out[i, j] = self.edge_features
            out[j, i] = self.edge_features
        return out


def _pearson_rows(x):
    """Pairwise Pearson correlation between rows of x (N, T); zero-variance rows give 0."""
    xc = x - x.mean(axis=1, keepdims=True)
    ss = np.einsum("it,it->i", xc, xc)
    norm = np.sqrt(ss)
    ok = norm > 0
    denom = np.outer(np.where(ok, norm, 1.0), np.where(ok, norm, 1.0))
    c = (xc @ xc.T) / denom
    c[~ok, :] = 0.0
    c[:, ~ok] = 0.0
    return np.clip(c, -1.0, 1.0)


def correlation_matrix(window):
    """Mean over features of the per-feature Pearson correlation across T.

    ``window`` is an (N, D, T) array or FeatureTensor, normally standardised.
    """
    x = getattr(window, "values", window)
    x = np.asarray(x, dtype=np.float64)
    N, D, T = x.shape
    if N < 2:
        raise ValueError("need at least two assets for a correlation matrix")
    if T < 3:
        raise ValueError("need at least three timesteps for correlations")
    c = np.zeros((N, N))
    for d in range(D):
        c += _pearson_rows(x[:, d, :])
    c /= D
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return CorrelationMatrix(np.clip(c, -1.0, 1.0))


def _sector_mask(sectors, n, asset_ids=None):
    if sectors is None:
        return np.zeros((n, n), dtype=bool)
    if isinstance(sectors, dict):
        if asset_ids is None:
            raise ValueError("a sector dict needs asset ids to align with")
        missing = [a for a in asset_ids if a not in sectors]
        if missing:
            raise ValueError(f"sector map is missing assets: {missing[:5]}")
        codes = [sectors[a] for a in asset_ids]
    else:
        codes = list(sectors)
        if len(codes) != n:
            raise ValueError("sector list length does not match asset count")
    codes = np.array(codes, dtype=object)
    same = codes[:, None] == codes[None, :]
    np.fill_diagonal(same, False)
    return same


def build_adjacency(C, tau=0.75, sectors=None, delta=0.1, asset_ids=None):
    """Threshold correlations, add the sector bonus, then apply the floor rule.

    A_ij = 1[C_ij >= tau] + delta * 1[same sector].  A node left without
    neighbours is linked to its highest-correlation peer with weight delta
    (weight 1 when delta is 0 so the link survives).
    """
    if not 0 < tau < 1:
        raise ValueError("tau must lie in (0, 1)")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    c = getattr(C, "values", C)
    n = c.shape[0]
    off = ~np.eye(n, dtype=bool)
    A = ((c >= tau) & off).astype(np.float64)
    A += delta * _sector_mask(sectors, n, asset_ids)
    floor_w = delta if delta > 0 else 1.0
    for i in range(n):
        if not np.any(A[i] > 0):
            cand = np.where(off[i], c[i], -np.inf)
            j = int(np.argmax(cand))
            A[i, j] = A[j, i] = floor_w
    iu, ju = np.nonzero(np.triu(A > 0, k=1))
    edges = np.stack([iu, ju], axis=1).astype(np.int64)
    return WindowGraph(A, edges, float(tau), float(delta), correlation=np.array(c, copy=True))


def modularity_from_adjacency(a):
    """B = A - d d^T / 2m for a symmetric weight matrix (diagonal zeroed)."""
    a = np.array(a, dtype=np.float64, copy=True)
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 0.0)
    d = a.sum(axis=1)
    two_m = a.sum()
    if abs(two_m) < 1e-12:
        log.warning("degenerate null model (2m = %.3g); modularity set to zero", two_m)
        return ModularityMatrix(np.zeros_like(a), d, 0.5 * two_m, a)
    return ModularityMatrix(a - np.outer(d, d) / two_m, d, 0.5 * two_m, a)


def nav_modularity(prices):
    """Modularity matrix of the window's NAV correlation graph."""
    values = prices.values if isinstance(prices, PriceMatrix) else np.asarray(prices, dtype=np.float64)
    if values.shape[0] < 3:
        raise ValueError("window needs at least three price rows")
    nav = compute_nav(values, 0).values
    return modularity_from_adjacency(_pearson_rows(nav.T))


def edge_features(graph, B):
    b = getattr(B, "values", B)
    if b.shape != graph.adjacency.shape:
        raise ValueError(f"modularity matrix {b.shape} does not match graph of {graph.n_nodes} nodes")
    if graph.n_edges:
        feats = b[graph.edge_list[:, 0], graph.edge_list[:, 1]].astype(np.float64)
    else:
        feats = np.zeros(0)
    return replace(graph, edge_features=feats)


# -- cached graph dumps ----------------------------------------------------------

def save_graph(graph, path, window_start=None):
    payload = {
        "format": GRAPH_FORMAT,
        "version": GRAPH_VERSION,
        "window_start": window_start,
        "n_nodes": graph.n_nodes,
        "tau": graph.tau,
        "delta": graph.delta,
        "edges": [
            {
                "i": int(i),
                "j": int(j),
                "weight": float(graph.adjacency[i, j]),
                "feature": None if graph.edge_features is None else float(graph.edge_features[k]),
            }
            for k, (i, j) in enumerate(graph.edge_list)
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_graph(path):
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != GRAPH_FORMAT or payload.get("version") != GRAPH_VERSION:
        raise ValueError(f"{path}: not a version-{GRAPH_VERSION} graph dump")
    n = payload["n_nodes"]
    A = np.zeros((n, n))
    edges, feats = [], []
    for e in payload["edges"]:
        A[e["i"], e["j"]] = A[e["j"], e["i"]] = e["weight"]
        edges.append((e["i"], e["j"]))
        feats.append(e["feature"])
    edge_arr = np.array(edges, dtype=np.int64).reshape(-1, 2)
    have = all(f is not None for f in feats)
    return WindowGraph(A, edge_arr, payload["tau"], payload["delta"],
                       edge_features=np.array(feats, dtype=np.float64) if have else None)
