"""Train the default synthetic benchmark for E in {1, 5, 10} and write the figure series.

Usage: python scripts/epoch_sweep.py OUT [--config FILE] [--rounds R] [--seed S]

Each run lands in OUT/E<E>/; afterwards OUT holds loss_E<E>.csv and
drift_E<E>.csv, and a short summary is printed.
"""
import argparse
from dataclasses import replace
from pathlib import Path

import numpy as np

from feddadil.cli import drift_summary, figure_data, train_run
from feddadil.config import load_config, parse_config


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("out", type=Path)
    p.add_argument("--config", type=Path)
    p.add_argument("--rounds", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, nargs="+", default=[1, 5, 10])
    args = p.parse_args()

    base = load_config(args.config) if args.config else parse_config("")
    config_dir = args.config.parent if args.config else None
    for E in args.epochs:
        cfg = replace(base, epochs=E, rounds=args.rounds, seed=args.seed)
        print(f"training E={E}", flush=True)
        train_run(cfg, args.out / f"E{E}", config_dir=config_dir)
    figure_data(args.out)
    for E in args.epochs:
        loss = np.loadtxt(args.out / f"loss_E{E}.csv", delimiter=",", skiprows=1)[:, 1]
        drift = np.loadtxt(args.out / f"drift_E{E}.csv", delimiter=",", skiprows=1)[:, 1]
        s = drift_summary(drift)
        print(f"E={E:3d}  loss r1 {loss[0]:.4f}  r{len(loss)} {loss[-1]:.4f}  "
              f"drift r1-10 {s['early_mean']:.4f}  late slope {s['late_slope']:.3e}")


if __name__ == "__main__":
    main()
