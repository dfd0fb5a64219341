"""End-to-end orchestration: windows -> model -> clusters -> metrics -> files."""

from __future__ import annotations

import contextlib
import csv
import hashlib
import json
import logging
import platform
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .cluster_eval import (
    adjusted_rand_index,
    clustering_metrics,
    nav_composite_score,
    nav_metrics,
    spectral_cluster,
    stability_profile,
)
from .config import ConfigError, PipelineConfig
from .fusion_training import TrainConfig, temporal_loss, train
from .graph_encoder import MODE_ORDER, AttentionMode, encode_graph
from .marketdata import WARMUP, compute_features, window_slices
from .model import FTSModel, ModelConfig, prepare_window
from .neuralcore import GradReport, Tensor, check_primitives, grad_check
from .synthetic import SyntheticSpec, generate_synthetic
from .temporal_encoders import encode_scales

log = logging.getLogger(__name__)


class PipelineError(RuntimeError):
    """A module failed while processing a specific window."""


@dataclass
class RunManifest:
    config: dict
    seed: int
    input_hash: str
    outputs: dict = field(default_factory=dict)
    software: dict = field(default_factory=dict)
    windows: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


@dataclass
class PipelineResult:
    assignments: list  # ClusterAssignment per window, window = start index
    splits: list  # "train" or "eval" per window
    rows: list  # per-window metric records
    summary: dict
    manifest: RunManifest
    history: list
    model: FTSModel = field(repr=False, default=None)
    asset_ids: tuple = ()

    @property
    def eval_assignments(self):
        return [a for a, s in zip(self.assignments, self.splits) if s == "eval"]


def input_hash(prices):
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(prices.values, dtype="<f8").tobytes())
    h.update("\x1f".join(prices.asset_ids).encode())
    h.update("\x1f".join(str(d) for d in prices.dates).encode())
    return h.hexdigest()


def model_config(config, n_nodes, n_features=7, window=None):
    return ModelConfig(
        n_nodes=n_nodes, n_features=n_features, window=config.window if window is None else window,
        d_latent=config.d_latent, hidden=config.hidden, n_heads=config.n_heads,
        n_inducing=config.n_inducing, reduction=config.reduction, dropout=config.dropout, mode=config.mode,
    )


def prepare_windows(config, prices, sectors=None):
    feats = compute_features(prices)
    if feats.values.shape[2] < config.window:
        raise PipelineError(f"{prices.n_times} price rows leave {feats.values.shape[2]} feature days after "
                            f"the {WARMUP}-day warm-up; window {config.window} does not fit")
    out = []
    for ws in window_slices(feats, prices, config.window, config.stride):
        try:
            out.append(prepare_window(ws, config.tau, config.delta, sectors))
        except Exception as exc:
            raise PipelineError(f"window {ws.start}: {exc}") from exc
    return out


def split_windows(n, fraction):
    n_train = max(1, int(np.floor(fraction * n)))
    if n > 1:
        n_train = min(n_train, n - 1)
    return n_train


def cluster_window(model, window, config):
    z = model.embed(window)
    return spectral_cluster(z, config.k_range, seed=config.seed, n_init=config.kmeans_restarts,
                            window=window.start)


def score_function(config):
    def score(model, windows):
        vals = []
        for w in windows:
            a = cluster_window(model, w, config)
            s = nav_composite_score(a, w.prices, config.w_intra, config.w_inter)
            if s is not None:
                vals.append(s)
        return float(np.mean(vals)) if vals else None
    return score


def _window_row(window, assignment, split, config, truth=None):
    m_abs = clustering_metrics(assignment, window.x)
    m_signed = clustering_metrics(assignment, window.x, signed=True)
    m_nav = nav_metrics(assignment, window.prices)
    row = {
        "window_start": window.start,
        "split": split,
        "K_comm": assignment.k,
        "IntraCorr": m_abs.intra_corr,
        "InterCorr": m_abs.inter_corr,
        "InterDissim": m_abs.inter_dissim,
        "S": nav_composite_score(assignment, window.prices, config.w_intra, config.w_inter),
        "IntraCorr_signed": m_signed.intra_corr,
        "InterCorr_signed": m_signed.inter_corr,
        "InterDissim_signed": m_signed.inter_dissim,
        "IntraCorr_nav": m_nav.intra_corr,
        "InterDissim_nav": m_nav.inter_dissim,
    }
    if truth is not None:
        row["ARI"] = adjusted_rand_index(assignment.labels, truth)
    return row


def _mean(rows, key):
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def _limits(config):
    return threadpool_limits(1) if config.single_thread else contextlib.nullcontext()


def run_pipeline(config, prices, sectors=None, output_dir=None, truth=None, windows=None):
    """Train on the first windows, cluster every window, report held-out metrics."""
    with _limits(config):
        return _run(config, prices, sectors, output_dir, truth, windows)


def _run(config, prices, sectors, output_dir, truth, windows):
    windows = prepare_windows(config, prices, sectors) if windows is None else windows
    n_train = split_windows(len(windows), config.train_fraction)
    train_w, eval_w = windows[:n_train], windows[n_train:]
    if not eval_w:
        log.warning("only one window: evaluating on the training window")
    model = FTSModel(model_config(config, prices.n_assets, windows[0].x.shape[1]), seed=config.seed)
    tcfg = replace(config.train, seed=config.seed)
    out_dir = Path(output_dir) if output_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log_path = out_dir / "train_log.jsonl" if out_dir else None
    result = train(model, train_w, eval_w, tcfg, score_function(config), log_path)

    assignments, splits, rows = [], [], []
    for i, w in enumerate(windows):
        split = "train" if i < n_train else "eval"
        try:
            a = cluster_window(model, w, config)
            rows.append(_window_row(w, a, split, config, truth))
        except Exception as exc:
            raise PipelineError(f"window {w.start}: {exc}") from exc
        assignments.append(a)
        splits.append(split)

    eval_rows = [r for r in rows if r["split"] == "eval"] or rows
    stab = stability_profile(assignments)
    summary = {
        "n_windows": len(windows),
        "n_train": n_train,
        "mode": config.mode,
        "S": _mean(eval_rows, "S"),
        "IntraCorr": _mean(eval_rows, "IntraCorr"),
        "InterCorr": _mean(eval_rows, "InterCorr"),
        "InterDissim": _mean(eval_rows, "InterDissim"),
        "IntraCorr_signed": _mean(eval_rows, "IntraCorr_signed"),
        "InterDissim_signed": _mean(eval_rows, "InterDissim_signed"),
        "mean_K": _mean(eval_rows, "K_comm"),
        "scale_weights": model.scale_weights().tolist(),
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "stopped_early": result.stopped_early,
        "stability": {"counts": stab.counts.tolist(), "mean": stab.mean, "spikes": stab.spikes},
    }
    if truth is not None:
        summary["ARI"] = _mean(eval_rows, "ARI")

    manifest = RunManifest(
        config=config.to_dict(), seed=config.seed, input_hash=input_hash(prices),
        software={"ftscomm": __version__, "numpy": np.__version__, "python": platform.python_version()},
        windows={"count": len(windows), "train": n_train, "starts": [w.start for w in windows]},
    )
    res = PipelineResult(assignments, splits, rows, summary, manifest, result.history, model, prices.asset_ids)
    if out_dir:
        write_outputs(res, out_dir)
    return res


# -- persistence -----------------------------------------------------------------------

def write_assignments(path, assignments, asset_ids):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["window_start", "asset_id", "label"])
        for a in assignments:
            for asset, label in zip(asset_ids, a.labels.tolist()):
                w.writerow([a.window, asset, label])


def read_assignments(path):
    """Map window_start -> (asset ids, labels)."""
    out = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            ids, labels = out.setdefault(int(row["window_start"]), ([], []))
            ids.append(row["asset_id"])
            labels.append(int(row["label"]))
    return {k: (ids, np.array(lab)) for k, (ids, lab) in out.items()}


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_window_table(path, rows):
    keys = list(rows[0]) if rows else ["window_start"]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k)) for k in keys])


def write_outputs(result, out_dir):
    out_dir = Path(out_dir)
    paths = {
        "assignments": out_dir / "assignments.csv",
        "metrics": out_dir / "metrics.json",
        "windows": out_dir / "windows.csv",
        "train_log": out_dir / "train_log.jsonl",
        "manifest": out_dir / "manifest.json",
    }
    write_assignments(paths["assignments"], result.assignments, result.asset_ids)
    paths["metrics"].write_text(json.dumps({"summary": result.summary, "windows": result.rows}, indent=2))
    write_window_table(paths["windows"], result.rows)
    result.manifest.outputs = {k: str(v) for k, v in paths.items()}
    result.manifest.save(paths["manifest"])
    return paths


# -- experiments ------------------------------------------------------------------------

def run_ablation(config, prices, modes, truth=None, windows=None):
    """Run the pipeline once per attention mode on shared data and seed."""
    modes = [AttentionMode.parse(m) for m in modes]
    if len(set(modes)) < 2:
        raise ConfigError("an ablation needs at least two distinct modes")
    modes = [m for m in MODE_ORDER if m in modes]
    windows = prepare_windows(config, prices) if windows is None else windows
    rows = []
    for mode in modes:
        res = run_pipeline(replace(config, mode=mode.value), prices, truth=truth, windows=windows)
        s = res.summary
        rows.append({"mode": mode.value, "S": s["S"], "IntraCorr": s["IntraCorr"],
                     "InterDissim": s["InterDissim"], "ARI": s.get("ARI")})
    base = rows[0]
    for r in rows:
        for k in ("S", "IntraCorr", "InterDissim"):
            r[f"delta_{k}"] = None if r[k] is None or base[k] is None else r[k] - base[k]
    return rows


def relative_range(values):
    vals = np.array([v for v in values if v is not None], dtype=float)
    if vals.size == 0:
        return None
    return float((vals.max() - vals.min()) / abs(vals.mean()))


def run_window_sweep(config, prices, windows_T, truth=None):
    windows_T = [int(t) for t in windows_T]
    bad = [t for t in windows_T if t < 45]
    if bad:
        raise ConfigError(f"window lengths {bad} are shorter than the long-term kernel (45)")
    avail = prices.n_times - WARMUP
    too_long = [t for t in windows_T if t > avail]
    if too_long:
        raise ConfigError(f"window lengths {too_long} exceed the {avail} feature days available")
    rows = []
    for T in windows_T:
        res = run_pipeline(replace(config, window=T), prices, truth=truth)
        rows.append({"window": T, "S": res.summary["S"], "IntraCorr": res.summary["IntraCorr"],
                     "InterDissim": res.summary["InterDissim"], "ARI": res.summary.get("ARI")})
    return {"rows": rows, "relative_range": relative_range([r["S"] for r in rows])}


# -- gradient checks ------------------------------------------------------------------------

def toy_config(config=None):
    base = PipelineConfig() if config is None else config
    return replace(base, d_latent=8, hidden=None, n_heads=2, n_inducing=4, dropout=0.0, window=89, stride=1)


def run_gradcheck(config=None, n_nodes=6, n_coords=6, eps=1e-5, tol=1e-4):
    """Finite-difference checks of every primitive and module composition."""
    cfg = toy_config(config)
    data = generate_synthetic(SyntheticSpec(n_assets=n_nodes, n_days=WARMUP + cfg.window + 2, n_communities=2,
                                            seed=cfg.seed))
    window = prepare_windows(cfg, data.prices)[0]
    report = GradReport(tolerance=tol)
    report.merge(check_primitives(eps=eps, tol=tol), prefix="primitive/")
    tcfg = TrainConfig()
    x = Tensor(window.x)
    for mode in MODE_ORDER:
        model = FTSModel(model_config(replace(cfg, mode=mode.value), n_nodes), seed=cfg.seed)
        store = model.store
        gcfg = model.config.graph

        def graph_only(store=store, gcfg=gcfg):
            z = encode_graph(store, gcfg, x, window.context).z_graph
            return (z * z).mean()

        names = {k: v for k, v in store.items() if not k.startswith(("short", "long", "scale", "fusion"))}
        report.merge(grad_check(graph_only, names, eps=eps, tol=tol, n_coords=n_coords, seed=cfg.seed),
                     prefix=f"graph_encoder[{mode.value}]/")

        def full_loss(model=model):
            loss, _ = model.loss(window, np.random.default_rng(0), tcfg, train=False)
            return loss

        report.merge(grad_check(full_loss, dict(store.items()), eps=eps, tol=tol, n_coords=n_coords,
                                seed=cfg.seed), prefix=f"model[{mode.value}]/")

    model = FTSModel(model_config(cfg, n_nodes), seed=cfg.seed)

    def temporal_only():
        enc = encode_scales(model.store, x, model.config.short, model.config.long)
        return temporal_loss(x, enc.x_hat_short, enc.x_hat_long)

    enc_names = {k: v for k, v in model.store.items() if k.startswith(("short", "long"))}
    report.merge(grad_check(temporal_only, enc_names, eps=eps, tol=tol, n_coords=n_coords, seed=cfg.seed),
                 prefix="temporal_encoders/")
    return report
