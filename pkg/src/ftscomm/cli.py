"""Command-line entry point: ``ftscomm <command> [options]``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 failed check.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .cluster_eval import (
    ClusterAssignment,
    adjusted_rand_index,
    clustering_metrics,
    nav_composite_score,
    stability_profile,
)
from .config import ConfigError, PipelineConfig, load_config, self_test
from .marketdata import DataError, compute_features, load_prices, load_sectors, standardize_window, write_prices
from .pipeline import (
    PipelineError,
    read_assignments,
    run_ablation,
    run_gradcheck,
    run_pipeline,
    run_window_sweep,
    write_window_table,
)
from .synthetic import SyntheticSpec, generate_synthetic

OUTPUT_ENV = "FTSCOMM_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3

log = logging.getLogger("ftscomm")


def output_dir(args, default="ftscomm-out"):
    """--output-dir, then $FTSCOMM_OUTPUT_DIR, then ``default``."""
    chosen = getattr(args, "output_dir", None) or os.environ.get(OUTPUT_ENV) or default
    path = Path(chosen)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _config(args):
    cfg = load_config(args.config) if getattr(args, "config", None) else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_updates(seed=args.seed)
    return cfg


def read_labels(path, asset_ids):
    """Read ``asset_id,label`` rows and align them with ``asset_ids``."""
    labels = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                labels[row["asset_id"]] = int(row["label"])
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}: expected columns asset_id,label ({exc})") from None
    missing = [a for a in asset_ids if a not in labels]
    if missing:
        raise DataError(f"{path}: no label for assets {missing[:5]}")
    return np.array([labels[a] for a in asset_ids])


def write_labels(path, asset_ids, labels):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["asset_id", "label"])
        w.writerows(zip(asset_ids, np.asarray(labels).tolist()))


def _dump(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2))


# -- commands -------------------------------------------------------------------------

def cmd_ingest(args):
    prices = load_prices(args.prices)
    out = output_dir(args)
    write_prices(prices, out / "prices.csv")
    summary = {"n_assets": prices.n_assets, "n_days": prices.n_times,
               "first": str(prices.dates[0]), "last": str(prices.dates[-1])}
    _dump(out / "ingest.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_synth(args):
    spec = SyntheticSpec(n_assets=args.n_assets, n_days=args.n_days, n_communities=args.communities,
                         noise_sigma=args.noise, switch_day=args.switch_day, seed=args.seed or 0)
    try:
        data = generate_synthetic(spec)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    out = output_dir(args)
    write_prices(data.prices, out / "prices.csv")
    write_labels(out / "labels.csv", data.prices.asset_ids, data.labels)
    if data.switch_day is not None:
        write_labels(out / "labels_after.csv", data.prices.asset_ids, data.labels_after)
    print(f"wrote {data.prices.n_times} days x {data.prices.n_assets} assets to {out}")
    return EXIT_OK


def cmd_run(args):
    cfg = _config(args)
    prices = load_prices(args.prices)
    sectors = load_sectors(args.sectors) if args.sectors else None
    truth = read_labels(args.truth, prices.asset_ids) if args.truth else None
    out = output_dir(args)
    res = run_pipeline(cfg, prices, sectors, out, truth)
    print(json.dumps({k: v for k, v in res.summary.items() if k != "stability"}))
    return EXIT_OK


def cmd_ablate(args):
    cfg = _config(args)
    prices = load_prices(args.prices)
    truth = read_labels(args.truth, prices.asset_ids) if args.truth else None
    rows = run_ablation(cfg, prices, args.modes.split(","), truth)
    out = output_dir(args)
    write_window_table(out / "ablation.csv", rows)
    _dump(out / "ablation.json", rows)
    for r in rows:
        print(json.dumps(r))
    return EXIT_OK


def cmd_sweep(args):
    cfg = _config(args)
    prices = load_prices(args.prices)
    truth = read_labels(args.truth, prices.asset_ids) if args.truth else None
    windows = [int(t) for t in args.windows.split(",")]
    result = run_window_sweep(cfg, prices, windows, truth)
    out = output_dir(args)
    _dump(out / "sweep.json", result)
    print(json.dumps(result))
    return EXIT_OK


def cmd_gradcheck(args):
    cfg = _config(args)
    report = run_gradcheck(cfg, n_nodes=args.nodes, eps=args.eps, tol=args.tol)
    if args.output_dir or os.environ.get(OUTPUT_ENV):
        _dump(output_dir(args) / "gradcheck.json", report.to_dict())
    for name, err in sorted(report.errors.items()):
        if args.verbose or err > report.tolerance:
            print(f"{'FAIL' if err > report.tolerance else 'ok  '} {err:.3e} {name}")
    print(f"max relative error {report.max_error:.3e} over {len(report.errors)} parameters")
    if not report.passed:
        print("failing parameters: " + ", ".join(sorted(report.failures())), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def cmd_metrics(args):
    """Recompute per-window metrics for an existing assignment file."""
    cfg = _config(args)
    prices = load_prices(args.prices)
    feats = compute_features(prices)
    truth = read_labels(args.truth, prices.asset_ids) if args.truth else None
    assignments = read_assignments(args.assignments)
    rows, ks = [], []
    for start, (ids, labels) in sorted(assignments.items()):
        if list(ids) != list(prices.asset_ids):
            raise DataError(f"window {start}: asset ids do not match the price file")
        stop = start + cfg.window
        if stop > feats.values.shape[2]:
            raise DataError(f"window {start}: needs {stop} feature days, have {feats.values.shape[2]}")
        a = ClusterAssignment(labels, int(labels.max()) + 1, start)
        x = standardize_window(feats.window(start, cfg.window)).values
        p = prices.values[feats.offset + start:feats.offset + stop]
        m = clustering_metrics(a, x)
        row = {"window_start": start, "K_comm": a.k, "IntraCorr": m.intra_corr, "InterCorr": m.inter_corr,
               "InterDissim": m.inter_dissim, "S": nav_composite_score(a, p, cfg.w_intra, cfg.w_inter)}
        if truth is not None:
            row["ARI"] = adjusted_rand_index(labels, truth)
        rows.append(row)
        ks.append(a.k)
    if not rows:
        raise DataError(f"{args.assignments}: no assignments")
    out = output_dir(args)
    write_window_table(out / "metrics_windows.csv", rows)
    stab = stability_profile(ks)
    summary = {"n_windows": len(rows), "mean_K": stab.mean, "spikes": stab.spikes}
    for key in ("IntraCorr", "InterCorr", "InterDissim", "S", "ARI"):
        vals = [r[key] for r in rows if r.get(key) is not None]
        if vals:
            summary[key] = float(np.mean(vals))
    _dump(out / "metrics_summary.json", summary)
    print(json.dumps(summary))
    return EXIT_OK


def cmd_selftest(args):
    drift = self_test(_config(args))
    if drift:
        print("defaults differ from the reference settings: " + ", ".join(drift), file=sys.stderr)
        return EXIT_CHECK
    print("configuration matches the reference defaults")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ftscomm", description="Temporal graph community detection for price panels.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, prices=True, config=True):
        if prices:
            sp.add_argument("--prices", required=True, help="CSV with a date column and one column per asset")
        if config:
            sp.add_argument("--config", help="TOML or JSON file with PipelineConfig fields")
            sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", help=f"output directory (default: ${OUTPUT_ENV} or ./ftscomm-out)")
        return sp

    sp = common(sub.add_parser("ingest", help="clean a price file"), config=False)
    sp.set_defaults(func=cmd_ingest)

    sp = common(sub.add_parser("synth", help="generate planted-community prices"), prices=False, config=False)
    sp.add_argument("--n-assets", type=int, default=30)
    sp.add_argument("--n-days", type=int, default=300)
    sp.add_argument("--communities", type=int, default=3)
    sp.add_argument("--noise", type=float, help="idiosyncratic volatility (default half the factor volatility)")
    sp.add_argument("--switch-day", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = common(sub.add_parser("run", help="train, cluster every window and write outputs"))
    sp.add_argument("--sectors", help="CSV of asset,sector_code rows")
    sp.add_argument("--truth", help="CSV of asset_id,label rows for ARI")
    sp.set_defaults(func=cmd_run)

    sp = common(sub.add_parser("ablate", help="compare attention modes"))
    sp.add_argument("--modes", default="static,basic,enhanced,full")
    sp.add_argument("--truth")
    sp.set_defaults(func=cmd_ablate)

    sp = common(sub.add_parser("sweep", help="compare window lengths"))
    sp.add_argument("--windows", default="60,89,120")
    sp.add_argument("--truth")
    sp.set_defaults(func=cmd_sweep)

    sp = common(sub.add_parser("gradcheck", help="finite-difference gradient checks"), prices=False)
    sp.add_argument("--nodes", type=int, default=6)
    sp.add_argument("--eps", type=float, default=1e-5)
    sp.add_argument("--tol", type=float, default=1e-4)
    sp.set_defaults(func=cmd_gradcheck)

    sp = common(sub.add_parser("metrics", help="score an assignment file"))
    sp.add_argument("--assignments", required=True)
    sp.add_argument("--truth")
    sp.set_defaults(func=cmd_metrics)

    sp = common(sub.add_parser("selftest", help="compare config defaults with reference settings"), prices=False)
    sp.set_defaults(func=cmd_selftest)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, PipelineError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
