import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ftscomm.config import PipelineConfig
from ftscomm.fusion_training import (
    AdamState,
    EarlyStopping,
    TrainConfig,
    adam_step,
    add_gated_fusion,
    fusion_concat,
    gated_fusion,
    graph_loss,
    sample_negatives,
    stopping_epoch,
    temporal_loss,
    train,
)
from ftscomm.model import FTSModel
from ftscomm.neuralcore import ParamStore, Tensor
from ftscomm.pipeline import model_config, prepare_windows
from ftscomm.synthetic import SyntheticSpec, generate_synthetic

N, H, DS, TS, DL, TL, DZ = 5, 4, 2, 3, 2, 2, 6
WIDTH = H + DS * TS + DL * TL


def _streams(seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((N, H)), rng.standard_normal((N, DS, TS)), rng.standard_normal((N, DL, TL))


def _fusion_store(seed=0):
    store = ParamStore()
    add_gated_fusion(store, WIDTH, DZ, np.random.default_rng(seed))
    return store


def _layer_norm(x, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


# -- fusion -------------------------------------------------------------------------

def test_concat_layout():
    zg, zs, zl = _streams()
    z = fusion_concat(zg, zs, zl, weights=Tensor(np.array([2.0, 3.0]))).data
    assert z.shape == (N, WIDTH)
    np.testing.assert_array_equal(z[:, :H], zg)
    np.testing.assert_array_equal(z[:, H:H + DS * TS], 2.0 * zs.reshape(N, -1))
    np.testing.assert_array_equal(z[:, H + DS * TS:], 3.0 * zl.reshape(N, -1))


def test_gate_closed_leaves_residual():
    store = _fusion_store()
    store["fusion.W_g.weight"].data[:] = 0.0
    store["fusion.W_g.bias"].data[:] = -800.0
    zg, zs, zl = _streams()
    out = gated_fusion(store, zg, zs, zl).data
    z = fusion_concat(zg, zs, zl).data
    np.testing.assert_array_equal(out, z @ store["fusion.W_r.weight"].data.T)


def test_gate_open_adds_transform():
    store = _fusion_store()
    store["fusion.W_g.weight"].data[:] = 0.0
    store["fusion.W_g.bias"].data[:] = 40.0
    zg, zs, zl = _streams()
    z = fusion_concat(zg, zs, zl).data
    p = {k: v.data for k, v in store.items()}
    hidden = _layer_norm(z @ p["fusion.W_3.weight"].T + p["fusion.W_3.bias"])
    hidden = hidden * p["fusion.LN_3.gain"] + p["fusion.LN_3.bias"]
    act = np.maximum(hidden, 0.0)
    transform = _layer_norm(act @ p["fusion.W_4.weight"].T + p["fusion.W_4.bias"])
    transform = transform * p["fusion.LN_4.gain"] + p["fusion.LN_4.bias"]
    want = transform + z @ p["fusion.W_r.weight"].T
    np.testing.assert_allclose(gated_fusion(store, zg, zs, zl).data, want, atol=1e-12)


def test_fusion_width_mismatch():
    store = _fusion_store()
    zg, zs, zl = _streams()
    with pytest.raises(ValueError, match=f"expected {WIDTH}, got {WIDTH - 1}"):
        gated_fusion(store, zg[:, :-1], zs, zl)


def test_dropout_only_in_training():
    store = _fusion_store()
    zg, zs, zl = _streams()
    a = gated_fusion(store, zg, zs, zl).data
    b = gated_fusion(store, zg, zs, zl, dropout=0.0, rng=np.random.default_rng(0)).data
    c = gated_fusion(store, zg, zs, zl, dropout=0.5, rng=np.random.default_rng(0)).data
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


# -- graph loss ---------------------------------------------------------------------

def test_graph_loss_zero_embedding_is_ln2():
    edges = np.array([[0, 1], [2, 3]])
    loss = graph_loss(np.zeros((4, 3)), edges, rng=np.random.default_rng(0))
    assert loss.data == pytest.approx(math.log(2.0), abs=1e-15)


def test_graph_loss_scalar_oracle():
    rng = np.random.default_rng(3)
    z = rng.standard_normal((4, 3))
    edges = np.array([[0, 1], [1, 2]])
    negatives = np.array([[0, 3], [2, 3]])
    terms = []
    for (i, j), y in [((0, 1), 1), ((1, 2), 1), ((0, 3), 0), ((2, 3), 0)]:
        s = 1.0 / (1.0 + math.exp(-float(sum(z[i, k] * z[j, k] for k in range(3)))))
        terms.append(-math.log(s) if y else -math.log(1.0 - s))
    got = graph_loss(z, edges, negatives=negatives).data
    assert got == pytest.approx(sum(terms) / 4, abs=1e-12)


def test_graph_loss_separated_limit():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0], [-1.0, 0.0]])
    edges = np.array([[0, 1], [2, 3]])
    neg = np.array([[0, 2], [1, 3]])
    losses = [float(graph_loss(z * s, edges, negatives=neg).data) for s in (1, 3, 10)]
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-40


def test_graph_loss_needs_negatives():
    with pytest.raises(ValueError, match="negative"):
        graph_loss(np.zeros((3, 2)), np.array([[0, 1]]), ratio=0)
    with pytest.raises(ValueError, match="no edges"):
        graph_loss(np.zeros((3, 2)), np.zeros((0, 2)))


def test_graph_loss_complete_graph_warns():
    edges = np.array([[0, 1], [0, 2], [1, 2]])
    with pytest.warns(UserWarning, match="complete"):
        loss = graph_loss(np.ones((3, 2)), edges)
    assert loss.data == pytest.approx(math.log1p(math.exp(-2.0)))


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 12), st.integers(0, 2**31 - 1))
def test_negatives_are_non_edges(n, seed):
    rng = np.random.default_rng(seed)
    iu = np.array(np.triu_indices(n, 1)).T
    edges = iu[rng.random(len(iu)) < 0.3]
    neg = sample_negatives(n, edges, len(edges) + 1, np.random.default_rng(seed))
    pairs = {tuple(e) for e in edges.tolist()}
    got = [tuple(e) for e in neg.tolist()]
    assert len(set(got)) == len(got)
    assert all(i < j and (i, j) not in pairs for i, j in got)
    again = sample_negatives(n, edges, len(edges) + 1, np.random.default_rng(seed))
    np.testing.assert_array_equal(neg, again)


# -- temporal loss ------------------------------------------------------------------

def test_temporal_loss_cases():
    x = np.random.default_rng(0).standard_normal((3, 2, 5))
    assert temporal_loss(x, x, x).data == 0.0
    assert temporal_loss(x, x + 1.0, x - 1.0).data == pytest.approx(1.0, abs=1e-15)
    assert temporal_loss(x, x + 2.0, x).data == pytest.approx(2.0, abs=1e-15)


def test_temporal_loss_scalar_oracle():
    rng = np.random.default_rng(1)
    x, a, b = rng.standard_normal((3, 2, 2, 4))
    flat = list(zip(x.ravel(), a.ravel(), b.ravel()))
    want = 0.5 * (sum((p - q) ** 2 for q, p, _ in flat) / len(flat) + sum((p - q) ** 2 for q, _, p in flat) / len(flat))
    assert temporal_loss(x, a, b).data == pytest.approx(want, abs=1e-13)


def test_temporal_loss_shape_error():
    with pytest.raises(ValueError, match="reconstruction shapes"):
        temporal_loss(np.zeros((2, 3, 4)), np.zeros((2, 3, 4)), np.zeros((2, 3, 5)))


# -- adam ---------------------------------------------------------------------------

def _scalar_store(value):
    store = ParamStore()
    store.add("theta", np.array([value]))
    return store


def test_adam_zero_gradient_keeps_params():
    store = _scalar_store(1.5)
    state = AdamState()
    for _ in range(5):
        store["theta"].grad = np.zeros(1)
        adam_step(store, state, 0.1)
    assert store["theta"].data[0] == 1.5


def test_adam_constant_gradient_sign_limit():
    store = _scalar_store(0.0)
    state = AdamState()
    prev = 0.0
    for _ in range(200):
        store["theta"].grad = np.array([-3.7])
        adam_step(store, state, 0.01)
        step = store["theta"].data[0] - prev
        prev = store["theta"].data[0]
    assert step == pytest.approx(0.01, rel=1e-6)


def test_adam_quadratic_matches_scalar_recursion():
    store = _scalar_store(1.0)
    state = AdamState()
    theta, m, v = 1.0, 0.0, 0.0
    mags = []
    for t in range(1, 21):
        store["theta"].grad = 2.0 * store["theta"].data.copy()
        adam_step(store, state, 0.1)
        g = 2.0 * theta
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        theta -= 0.1 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
        assert store["theta"].data[0] == pytest.approx(theta, abs=1e-14)
        mags.append(abs(theta))
    # momentum carries theta through zero at step 12; |theta| falls strictly until then
    assert all(b < a for a, b in zip([1.0] + mags[:11], mags[:11]))
    assert mags[11] > mags[10]


def test_adam_rejects_non_finite_gradient():
    store = _scalar_store(1.0)
    store["theta"].grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="theta"):
        adam_step(store, AdamState(), 0.1)


# -- early stopping -----------------------------------------------------------------

def test_early_stop_documented_sequence():
    assert stopping_epoch([0.5, 0.50005, 0.50009, 0.6, 0.61]) == 3


def test_early_stop_needs_consecutive_small_deltas():
    assert stopping_epoch([0.5, 0.50005, 0.7, 0.70005, 0.9]) is None
    assert stopping_epoch([0.5, 0.50005, 0.7, 0.70005, 0.70006]) == 5


def test_early_stop_undefined_score_resets():
    rule = EarlyStopping()
    assert [rule.update(s) for s in (0.4, None, 0.4, 0.4, 0.4)] == [False, False, False, False, True]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=1, max_size=30))
def test_early_stop_matches_definition(scores):
    deltas = [abs(b - a) < 1e-4 for a, b in zip(scores, scores[1:])]
    want = None
    for k in range(1, len(deltas)):
        if deltas[k] and deltas[k - 1]:
            want = k + 2
            break
    assert stopping_epoch(scores) == want


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=0)
    with pytest.raises(ValueError):
        TrainConfig(tolerance=0.0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)


# -- training loop ------------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny():
    cfg = PipelineConfig(window=45, stride=15, d_latent=4, n_heads=2, n_inducing=2)
    data = generate_synthetic(SyntheticSpec(n_assets=6, n_days=150, n_communities=2, seed=4))
    windows = prepare_windows(cfg, data.prices)
    return cfg, windows


def _model(cfg, windows):
    return FTSModel(model_config(cfg, windows[0].x.shape[0]), seed=0)


def test_loss_breakdown_additive(tiny):
    cfg, windows = tiny
    model = _model(cfg, windows)
    tc = TrainConfig(lambda_graph=0.3, lambda_temporal=2.0)
    total, parts = model.loss(windows[0], np.random.default_rng(0), tc, train=False)
    assert parts.total == pytest.approx(0.3 * parts.graph_loss + 2.0 * parts.temporal_loss, abs=1e-12)
    assert parts.total == float(total.data)
    assert parts.graph_loss >= 0 and parts.temporal_loss >= 0


def test_single_epoch(tiny, tmp_path):
    cfg, windows = tiny
    model = _model(cfg, windows)
    res = train(model, windows[:2], windows[2:], TrainConfig(max_epochs=1), lambda m, w: 0.5, tmp_path / "log.jsonl")
    assert len(res.history) == 1 and not res.stopped_early
    record = json.loads((tmp_path / "log.jsonl").read_text())
    assert set(record) == {"epoch", "graph_loss", "temporal_loss", "total", "val_score", "stopped_early"}


def test_stops_on_flat_score_and_restores_best(tiny):
    cfg, windows = tiny
    model = _model(cfg, windows)
    scores = iter([0.2, 0.9, 0.3, 0.3, 0.3, 0.3])
    snapshots = []

    def score(m, w):
        snapshots.append(m.store.state())
        return next(scores)

    res = train(model, windows[:2], windows[2:], TrainConfig(max_epochs=6), score)
    assert len(res.history) == 5 and res.stopped_early
    assert res.best_epoch == 2 and res.best_score == 0.9
    assert res.history[-1]["stopped_early"]
    for name, value in snapshots[1].items():
        np.testing.assert_array_equal(model.store[name].data, value)


def test_training_is_deterministic(tiny):
    cfg, windows = tiny
    logs = []
    for _ in range(2):
        model = _model(cfg, windows)
        res = train(model, windows[:2], [], TrainConfig(max_epochs=3, seed=7), lambda m, w: None)
        logs.append(res.history)
    assert logs[0] == logs[1]
    assert logs[0][-1]["total"] < logs[0][0]["total"]
