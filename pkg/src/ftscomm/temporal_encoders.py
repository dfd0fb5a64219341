"""Dual-scale convolutional encoders with channel/temporal attention.

The short-term pathway stacks two (k=5, s=3) convolutions, the long-term
pathway a single (k=45, s=11) convolution.  Every convolution is followed by
dual attention and GELU.  Decoders mirror the encoders with transposed
convolutions, right-padding each stage back to the length seen by the
matching encoder layer.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .neuralcore import F, Tensor, as_tensor, conv_out_len, layers
from .neuralcore.params import xavier_uniform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScaleEncoderConfig:
    kernel: int
    stride: int
    n_layers: int
    latent: int
    reduction: int = 16

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.n_layers < 1 or self.latent < 1:
            raise ValueError(f"invalid encoder config {self}")

    def lengths(self, T):
        """Temporal lengths entering each layer plus the final output length."""
        out = [T]
        for layer in range(self.n_layers):
            L = out[-1]
            if L < self.kernel:
                raise ValueError(f"layer {layer + 1} (k={self.kernel}, s={self.stride}) "
                                 f"needs length >= {self.kernel}, got {L}")
            out.append(conv_out_len(L, self.kernel, self.stride))
        return out


SHORT = ScaleEncoderConfig(kernel=5, stride=3, n_layers=2, latent=16)
LONG = ScaleEncoderConfig(kernel=45, stride=11, n_layers=1, latent=16)


def check_receptive_ratio(short, long, minimum=8.0):
    """Warn when the long/short kernel ratio drops below ``minimum``."""
    ratio = long.kernel / short.kernel
    if ratio < minimum:
        warnings.warn(f"long/short kernel ratio {ratio:.2f} is below {minimum:g}; "
                      "the two pathways will see overlapping scales", stacklevel=2)
    return ratio


@dataclass
class EncodedScales:
    z_short: Tensor
    z_long: Tensor
    x_hat_short: Tensor
    x_hat_long: Tensor
    scale_weights: Tensor


def bottleneck(width, reduction):
    return max(width // reduction, 1)


# -- dual attention ----------------------------------------------------------------

def add_dual_attention(store, name, channels, length, reduction, rng):
    hc = bottleneck(channels, reduction)
    layers.add_dense(store, f"{name}.channel_fc1", channels, hc, rng)
    layers.add_dense(store, f"{name}.channel_fc2", hc, channels, rng)
    layers.add_dense(store, f"{name}.temporal_fc1", length, hc, rng)
    layers.add_dense(store, f"{name}.temporal_fc2", hc, length, rng)


def _channel_fc(store, name, v):
    return layers.dense(store, f"{name}.channel_fc2", F.relu(layers.dense(store, f"{name}.channel_fc1", v)))


def channel_gate(store, name, h):
    """sigmoid(FC(avg_L h) + FC(max_L h)) with a shared C -> C/r -> C bottleneck."""
    avg = F.mean(h, axis=2)
    mx = F.tmax(h, axis=2)
    return F.sigmoid(_channel_fc(store, name, avg) + _channel_fc(store, name, mx))


def temporal_gate(store, name, h):
    """sigmoid(Linear(GELU(Linear(mean_C h))))."""
    m = F.mean(h, axis=1)
    return F.sigmoid(layers.dense(store, f"{name}.temporal_fc2",
                                  F.gelu(layers.dense(store, f"{name}.temporal_fc1", m))))


def dual_attention(store, name, h):
    """Scale h (N, C, L) by a per-channel gate and a per-timestep gate."""
    cg = channel_gate(store, name, h)
    tg = temporal_gate(store, name, h)
    N, C, L = h.shape
    return h * F.reshape(cg, (N, C, 1)) * F.reshape(tg, (N, 1, L))


# -- encoders and decoders ------------------------------------------------------------

def add_scale_encoder(store, name, cfg, n_features, T, rng):
    lengths = cfg.lengths(T)
    c_in = n_features
    for layer in range(cfg.n_layers):
        c_out = cfg.latent
        store.add(f"{name}.conv{layer}.weight", xavier_uniform((c_out, c_in, cfg.kernel), rng))
        store.add(f"{name}.conv{layer}.bias", np.zeros(c_out))
        add_dual_attention(store, f"{name}.attn{layer}", c_out, lengths[layer + 1], cfg.reduction, rng)
        c_in = c_out
    # decoder runs the layers in reverse; layer `layer` maps latent -> c_in of the encoder layer
    for layer in reversed(range(cfg.n_layers)):
        c_back = n_features if layer == 0 else cfg.latent
        store.add(f"{name}.deconv{layer}.weight", xavier_uniform((cfg.latent, c_back, cfg.kernel), rng))
        store.add(f"{name}.deconv{layer}.bias", np.zeros(c_back))


def scale_encode(store, name, cfg, x):
    """Run one pathway on x (N, D, T); returns (latent, list of per-layer outputs)."""
    x = as_tensor(x)
    cfg.lengths(x.shape[2])
    h = x
    trace = []
    for layer in range(cfg.n_layers):
        h = F.conv1d(h, store[f"{name}.conv{layer}.weight"], store[f"{name}.conv{layer}.bias"], cfg.stride)
        h = F.gelu(dual_attention(store, f"{name}.attn{layer}", h))
        trace.append(h)
    return h, trace


def _pad_right(x, target):
    N, C, L = x.shape
    if L == target:
        return x
    if L > target:
        raise ValueError(f"decoder produced length {L} beyond target {target}")
    return F.concat([x, Tensor(np.zeros((N, C, target - L)))], axis=2)


def scale_decode(store, name, cfg, z, T):
    """Mirror of :func:`scale_encode`; reconstructs (N, D, T) from the latent."""
    z = as_tensor(z)
    lengths = cfg.lengths(T)
    if z.shape[2] != lengths[-1] or z.shape[1] != cfg.latent:
        raise ValueError(f"latent of shape {z.shape[1:]} does not match "
                         f"({cfg.latent}, {lengths[-1]}) expected for T={T}")
    h = z
    for layer in reversed(range(cfg.n_layers)):
        h = F.conv1d_transpose(h, store[f"{name}.deconv{layer}.weight"], None, cfg.stride)
        h = _pad_right(h, lengths[layer])
        h = h + F.reshape(store[f"{name}.deconv{layer}.bias"], (1, -1, 1))
        if layer > 0:
            h = F.gelu(h)
    return h


def short_term_encode(store, x, cfg=SHORT, name="short"):
    return scale_encode(store, name, cfg, x)


def long_term_encode(store, x, cfg=LONG, name="long"):
    return scale_encode(store, name, cfg, x)


def adaptive_scale_weights(logits):
    """Softmax over the two learnable scale logits."""
    logits = as_tensor(logits)
    if logits.shape != (2,):
        raise ValueError("scale logits must be a 2-vector")
    if not np.all(np.isfinite(logits.data)):
        raise ValueError("scale logits must be finite")
    return F.softmax(logits, axis=0)


def add_temporal_encoders(store, n_features, T, rng, short=SHORT, long=LONG):
    check_receptive_ratio(short, long)
    add_scale_encoder(store, "short", short, n_features, T, rng)
    add_scale_encoder(store, "long", long, n_features, T, rng)
    store.add("scale_logits", np.zeros(2))


def encode_scales(store, x, short=SHORT, long=LONG):
    """Both pathways, both reconstructions and the softmax scale weights."""
    x = as_tensor(x)
    T = x.shape[2]
    z_s, _ = scale_encode(store, "short", short, x)
    z_l, _ = scale_encode(store, "long", long, x)
    return EncodedScales(
        z_short=z_s,
        z_long=z_l,
        x_hat_short=scale_decode(store, "short", short, z_s, T),
        x_hat_long=scale_decode(store, "long", long, z_l, T),
        scale_weights=adaptive_scale_weights(store["scale_logits"]),
    )


def decode_scales(store, z_short, z_long, T, short=SHORT, long=LONG):
    return scale_decode(store, "short", short, z_short, T), scale_decode(store, "long", long, z_long, T)
