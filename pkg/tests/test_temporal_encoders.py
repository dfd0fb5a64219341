import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftscomm.neuralcore import ParamStore, Tensor, grad_check
from ftscomm.temporal_encoders import (
    LONG,
    SHORT,
    ScaleEncoderConfig,
    adaptive_scale_weights,
    add_dual_attention,
    add_temporal_encoders,
    check_receptive_ratio,
    decode_scales,
    dual_attention,
    encode_scales,
    long_term_encode,
    short_term_encode,
)


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def _gelu(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def _fc(W, b, v, act=None):
    out = []
    for r in range(len(W)):
        s = b[r] + sum(W[r][c] * v[c] for c in range(len(v)))
        out.append(act(s) if act else s)
    return out


def scalar_dual_attention(store, name, H):
    """Loop evaluation of the channel gate, temporal gate and their product."""
    g = lambda k: store[f"{name}.{k}"].data.tolist()
    N, C, L = len(H), len(H[0]), len(H[0][0])
    out = [[[0.0] * L for _ in range(C)] for _ in range(N)]
    relu = lambda s: max(s, 0.0)
    for n in range(N):
        avg = [sum(H[n][c]) / L for c in range(C)]
        mx = [max(H[n][c]) for c in range(C)]
        fa = _fc(g("channel_fc2.weight"), g("channel_fc2.bias"),
                 _fc(g("channel_fc1.weight"), g("channel_fc1.bias"), avg, relu))
        fm = _fc(g("channel_fc2.weight"), g("channel_fc2.bias"),
                 _fc(g("channel_fc1.weight"), g("channel_fc1.bias"), mx, relu))
        cg = [_sig(a + b) for a, b in zip(fa, fm)]
        cm = [sum(H[n][c][t] for c in range(C)) / C for t in range(L)]
        tg = _fc(g("temporal_fc2.weight"), g("temporal_fc2.bias"),
                 _fc(g("temporal_fc1.weight"), g("temporal_fc1.bias"), cm, _gelu), _sig)
        for c in range(C):
            for t in range(L):
                out[n][c][t] = H[n][c][t] * cg[c] * tg[t]
    return np.array(out)


def _store(n_features=3, T=89, seed=0):
    store = ParamStore()
    add_temporal_encoders(store, n_features, T, np.random.default_rng(seed),
                          ScaleEncoderConfig(5, 3, 2, 4, 2), ScaleEncoderConfig(45, 11, 1, 4, 2))
    return store


def _randomize_biases(store, rng):
    for name, p in store.items():
        if name.endswith("bias"):
            p.data[:] = rng.normal(0, 0.3, p.shape)


# -- dual attention -------------------------------------------------------------------

def test_dual_attention_scalar_oracle():
    rng = np.random.default_rng(0)
    store = ParamStore()
    add_dual_attention(store, "da", 4, 6, 2, rng)
    _randomize_biases(store, rng)
    H = rng.standard_normal((2, 4, 6))
    got = dual_attention(store, "da", Tensor(H)).data
    np.testing.assert_allclose(got, scalar_dual_attention(store, "da", H.tolist()), atol=1e-12, rtol=0)


@pytest.mark.parametrize("bias,expected", [(60.0, "identity"), (-60.0, "zero")])
def test_dual_attention_saturated_gates(bias, expected):
    rng = np.random.default_rng(1)
    store = ParamStore()
    add_dual_attention(store, "da", 4, 6, 2, rng)
    for name, p in store.items():
        p.data[:] = 0.0
    store["da.channel_fc2.bias"].data[:] = bias / 2
    store["da.temporal_fc2.bias"].data[:] = bias
    H = rng.standard_normal((3, 4, 6))
    got = dual_attention(store, "da", Tensor(H)).data
    if expected == "identity":
        np.testing.assert_allclose(got, H, rtol=1e-12)
    else:
        np.testing.assert_allclose(got, 0.0, atol=1e-20)


def test_dual_attention_bottleneck_floor():
    store = ParamStore()
    add_dual_attention(store, "da", 4, 6, 16, np.random.default_rng(0))
    assert store["da.channel_fc1.weight"].shape == (1, 4)
    assert store["da.temporal_fc1.weight"].shape == (1, 6)


# -- shapes ------------------------------------------------------------------------

def test_default_shape_chain():
    store = _store()
    x = Tensor(np.random.default_rng(2).standard_normal((5, 3, 89)))
    z_s, trace = short_term_encode(store, x, ScaleEncoderConfig(5, 3, 2, 4, 2))
    assert [t.shape[2] for t in trace] == [29, 9]
    z_l, _ = long_term_encode(store, x, ScaleEncoderConfig(45, 11, 1, 4, 2))
    assert z_l.shape == (5, 4, 5)
    xs, xl = decode_scales(store, z_s, z_l, 89, ScaleEncoderConfig(5, 3, 2, 4, 2),
                           ScaleEncoderConfig(45, 11, 1, 4, 2))
    assert xs.shape == xl.shape == (5, 3, 89)


@pytest.mark.parametrize("T,short_len,long_len", [(60, [19, 5], 2), (120, [39, 12], 7), (45, [14, 4], 1)])
def test_shape_chains_other_windows(T, short_len, long_len):
    assert SHORT.lengths(T)[1:] == short_len
    assert LONG.lengths(T)[1:] == [long_len]


@settings(max_examples=15, deadline=None)
@given(st.integers(60, 120))
def test_shapes_follow_conv_arithmetic(T):
    store = _store(T=T)
    x = np.random.default_rng(T).standard_normal((2, 3, T))
    enc = encode_scales(store, x, ScaleEncoderConfig(5, 3, 2, 4, 2), ScaleEncoderConfig(45, 11, 1, 4, 2))
    l1 = (T - 5) // 3 + 1
    assert enc.z_short.shape == (2, 4, (l1 - 5) // 3 + 1)
    assert enc.z_long.shape == (2, 4, (T - 45) // 11 + 1)
    assert enc.x_hat_short.shape == enc.x_hat_long.shape == (2, 3, T)


def test_short_window_error_names_layer():
    with pytest.raises(ValueError, match="layer 2"):
        SHORT.lengths(12)
    with pytest.raises(ValueError, match="layer 1"):
        LONG.lengths(44)


def test_decoder_rejects_wrong_latent():
    store = _store()
    cfg_s, cfg_l = ScaleEncoderConfig(5, 3, 2, 4, 2), ScaleEncoderConfig(45, 11, 1, 4, 2)
    with pytest.raises(ValueError):
        decode_scales(store, np.zeros((2, 4, 8)), np.zeros((2, 4, 5)), 89, cfg_s, cfg_l)


def test_zero_input_zero_biases():
    store = _store()
    cfg_s, cfg_l = ScaleEncoderConfig(5, 3, 2, 4, 2), ScaleEncoderConfig(45, 11, 1, 4, 2)
    enc = encode_scales(store, np.zeros((2, 3, 89)), cfg_s, cfg_l)
    for t in (enc.z_short, enc.z_long, enc.x_hat_short, enc.x_hat_long):
        np.testing.assert_array_equal(t.data, 0.0)
    xs, xl = decode_scales(store, np.zeros((2, 4, 9)), np.zeros((2, 4, 5)), 89, cfg_s, cfg_l)
    np.testing.assert_array_equal(xs.data, 0.0)
    np.testing.assert_array_equal(xl.data, 0.0)


# -- scale weights ----------------------------------------------------------------------

def test_scale_weights_closed_forms():
    np.testing.assert_allclose(adaptive_scale_weights(np.zeros(2)).data, [0.5, 0.5])
    np.testing.assert_allclose(adaptive_scale_weights(np.array([math.log(3), 0.0])).data, [0.75, 0.25],
                               atol=1e-15)


@given(st.floats(-50, 50), st.floats(-50, 50))
def test_scale_weights_simplex(a, b):
    w = adaptive_scale_weights(np.array([a, b])).data
    assert np.all(w > 0) or min(a, b) - max(a, b) < -30
    assert abs(w.sum() - 1.0) <= 1e-12


def test_scale_weights_reject_nonfinite():
    with pytest.raises(ValueError):
        adaptive_scale_weights(np.array([np.nan, 0.0]))


def test_kernel_ratio_validation():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        assert check_receptive_ratio(SHORT, LONG) == 9.0
    with pytest.warns(UserWarning, match="ratio"):
        check_receptive_ratio(SHORT, ScaleEncoderConfig(20, 5, 1, 4))


# -- gradients --------------------------------------------------------------------------

def test_encoder_decoder_gradcheck():
    rng = np.random.default_rng(3)
    store = _store(n_features=2, T=50)
    _randomize_biases(store, rng)
    x = Tensor(rng.standard_normal((2, 2, 50)))
    cfg_s, cfg_l = ScaleEncoderConfig(5, 3, 2, 4, 2), ScaleEncoderConfig(45, 11, 1, 4, 2)

    def loss():
        enc = encode_scales(store, x, cfg_s, cfg_l)
        w = enc.scale_weights
        rec = ((enc.x_hat_short - x) ** 2).mean() + ((enc.x_hat_long - x) ** 2).mean()
        return rec + (enc.z_short * w[0]).sum() * 0.1 + (enc.z_long * w[1]).sum() * 0.1

    report = grad_check(loss, dict(store.items()), n_coords=20)
    assert report.passed, report.failures()
