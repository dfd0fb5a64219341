"""Composite-score sensitivity to the window length T.

    python scripts/window_sweep.py --windows 60,89,120 --seeds 1
"""

import argparse
import json

from ftscomm.config import PipelineConfig
from ftscomm.fusion_training import TrainConfig
from ftscomm.pipeline import run_window_sweep
from ftscomm.synthetic import SyntheticSpec, generate_synthetic


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--windows", default="60,89,120")
    ap.add_argument("--seeds", type=int, default=1)
    ap.add_argument("--stride", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--out")
    args = ap.parse_args()

    results = []
    for seed in range(args.seeds):
        data = generate_synthetic(SyntheticSpec(seed=seed))
        cfg = PipelineConfig(stride=args.stride, seed=seed, train=TrainConfig(max_epochs=args.epochs, seed=seed))
        sweep = run_window_sweep(cfg, data.prices, [int(t) for t in args.windows.split(",")], truth=data.labels)
        sweep["seed"] = seed
        results.append(sweep)
        for row in sweep["rows"]:
            print(json.dumps({"seed": seed, **row}), flush=True)
        print(f"seed {seed}: relative range of S {sweep['relative_range']:.2%}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2)


if __name__ == "__main__":
    main()
