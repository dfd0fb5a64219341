"""Attention-mode ablation on planted synthetic data with shared seeds.

    python scripts/ablation.py --seeds 5 --modes static,basic,enhanced,full
"""

import argparse
import json
from collections import defaultdict

import numpy as np

from ftscomm.config import PipelineConfig
from ftscomm.fusion_training import TrainConfig
from ftscomm.pipeline import run_ablation
from ftscomm.synthetic import SyntheticSpec, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--modes", default="static,basic,enhanced,full")
    ap.add_argument("--stride", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--out")
    args = ap.parse_args()

    per_mode = defaultdict(list)
    all_rows = []
    for seed in range(args.seeds):
        data = generate_synthetic(SyntheticSpec(seed=seed))
        cfg = PipelineConfig(stride=args.stride, seed=seed, train=TrainConfig(max_epochs=args.epochs, seed=seed))
        for row in run_ablation(cfg, data.prices, args.modes.split(","), truth=data.labels):
            row["seed"] = seed
            all_rows.append(row)
            per_mode[row["mode"]].append(row)
            print(json.dumps(row), flush=True)
    print(f"{'mode':<10}{'S':>9}{'IntraCorr':>11}{'InterDissim':>13}{'ARI':>8}")
    for mode, rows in per_mode.items():
        mean = {k: np.mean([r[k] for r in rows if r[k] is not None]) for k in ("S", "IntraCorr", "InterDissim", "ARI")}
        print(f"{mode:<10}{mean['S']:9.4f}{mean['IntraCorr']:11.4f}{mean['InterDissim']:13.4f}{mean['ARI']:8.3f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(all_rows, fh, indent=2)


if __name__ == "__main__":
    main()
