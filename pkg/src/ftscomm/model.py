"""End-to-end model: temporal encoders + graph encoder + gated fusion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fusion_training import LossBreakdown, add_gated_fusion, gated_fusion, graph_loss, temporal_loss
from .graph_encoder import AttentionMode, GraphContext, GraphEncoderConfig, add_graph_encoder, encode_graph
from .graphbuild import build_adjacency, correlation_matrix, edge_features, nav_modularity
from .marketdata import standardize_window
from .neuralcore import ParamStore, Tensor
from .temporal_encoders import ScaleEncoderConfig, add_temporal_encoders, encode_scales


@dataclass(frozen=True)
class ModelConfig:
    n_nodes: int
    n_features: int = 7
    window: int = 89
    d_latent: int = 32
    hidden: int | None = None  # graph encoder width h; defaults to d_latent
    n_heads: int = 4
    n_inducing: int = 16
    reduction: int = 16
    dropout: float = 0.1
    mode: AttentionMode = AttentionMode.FULL
    short_kernel: int = 5
    short_stride: int = 3
    long_kernel: int = 45
    long_stride: int = 11

    def __post_init__(self):
        object.__setattr__(self, "mode", AttentionMode.parse(self.mode))
        if self.d_latent < 2:
            raise ValueError("d_latent must be at least 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def h(self):
        return self.d_latent if self.hidden is None else self.hidden

    @property
    def d_short(self):
        return self.d_latent // 2

    @property
    def d_long(self):
        return self.d_latent - self.d_short

    @property
    def short(self):
        return ScaleEncoderConfig(self.short_kernel, self.short_stride, 2, self.d_short, self.reduction)

    @property
    def long(self):
        return ScaleEncoderConfig(self.long_kernel, self.long_stride, 1, self.d_long, self.reduction)

    @property
    def graph(self):
        return GraphEncoderConfig(self.n_nodes, self.n_features, self.window, self.h, self.n_heads,
                                  self.n_inducing, self.mode)

    @property
    def latent_lengths(self):
        return self.short.lengths(self.window)[-1], self.long.lengths(self.window)[-1]

    @property
    def concat_width(self):
        t_s, t_l = self.latent_lengths
        return self.h + t_s * self.d_short + t_l * self.d_long


@dataclass
class PreparedWindow:
    """Model-ready view of one sliding window."""

    start: int
    x: np.ndarray  # (N, D, T) standardised features
    prices: np.ndarray  # (T, N) raw prices for NAV evaluation
    graph: object  # WindowGraph with edge features
    context: GraphContext = field(repr=False, default=None)

    def __post_init__(self):
        if self.context is None:
            self.context = GraphContext.from_graph(self.graph)


def prepare_window(window_slice, tau=0.75, delta=0.1, sectors=None):
    """Standardise, build the correlation graph and attach B^NAV edge features."""
    feats = standardize_window(window_slice.features)
    graph = build_adjacency(correlation_matrix(feats), tau, sectors, delta, feats.asset_ids)
    graph = edge_features(graph, nav_modularity(window_slice.prices))
    return PreparedWindow(window_slice.start, feats.values, window_slice.prices.values, graph)


@dataclass
class ModelOutput:
    z_final: Tensor
    z_graph: Tensor
    scales: object
    graph_encoding: object


class FTSModel:
    def __init__(self, config, seed=0, store=None):
        self.config = config
        rng = np.random.default_rng(seed)
        if store is None:
            store = ParamStore()
            add_temporal_encoders(store, config.n_features, config.window, rng, config.short, config.long)
            add_graph_encoder(store, config.graph, rng)
            add_gated_fusion(store, config.concat_width, config.d_latent, rng)
        self.store = store

    def forward(self, window, rng=None, train=False):
        cfg = self.config
        x = Tensor(window.x)
        if x.shape[2] != cfg.window:
            raise ValueError(f"window length {x.shape[2]} does not match model window {cfg.window}")
        scales = encode_scales(self.store, x, cfg.short, cfg.long)
        genc = encode_graph(self.store, cfg.graph, x, window.context)
        drop = cfg.dropout if train else 0.0
        z = gated_fusion(self.store, genc.z_graph, scales.z_short, scales.z_long, scales.scale_weights,
                         dropout=drop, rng=rng)
        return ModelOutput(z, genc.z_graph, scales, genc)

    def loss(self, window, rng, train_config, train=True):
        out = self.forward(window, rng, train=train)
        g = graph_loss(out.z_final, window.graph.edge_list, rng=rng, ratio=train_config.negative_ratio)
        t = temporal_loss(window.x, out.scales.x_hat_short, out.scales.x_hat_long)
        lg, lt = train_config.lambda_graph, train_config.lambda_temporal
        total = g * lg + t * lt
        parts = LossBreakdown(float(g.data), float(t.data), float(total.data), lg, lt)
        return total, parts

    def embed(self, window):
        return self.forward(window, train=False).z_final.data.copy()

    def scale_weights(self):
        w = np.exp(self.store["scale_logits"].data - self.store["scale_logits"].data.max())
        return w / w.sum()
