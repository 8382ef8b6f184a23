"""Train and evaluate over several seeds, then report mean target accuracy per method.

Usage: python scripts/adaptation.py OUT [--config FILE] [--seeds 0 1 2 3 4]
"""
import argparse
import csv
from dataclasses import replace
from pathlib import Path

import numpy as np

from feddadil.cli import evaluate_run, train_run
from feddadil.config import load_config, parse_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    args = p.parse_args()

    base = load_config(args.config) if args.config else parse_config("")
    config_dir = args.config.parent if args.config else None
    results = []
    for seed in args.seeds:
        run = args.out / f"seed{seed}"
        train_run(replace(base, seed=seed), run, config_dir=config_dir)
        acc = evaluate_run(run)
        results.append(acc)
        print(f"seed {seed}: " + "  ".join(f"{k} {v:.4f}" for k, v in acc.items()), flush=True)

    methods = list(results[0])
    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "adaptation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", *methods])
        for seed, acc in zip(args.seeds, results):
            w.writerow([seed, *(repr(acc[m]) for m in methods)])
    mean = {m: float(np.mean([r[m] for r in results])) for m in methods}
    for m in methods:
        print(f"mean {m:12s} {mean[m]:.4f}  (vs source_only {mean[m] - mean['source_only']:+.4f})")


if __name__ == "__main__":
    main()
