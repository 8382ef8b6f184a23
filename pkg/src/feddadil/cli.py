"""Command-line driver.

    feddadil generate --config C --out DIR      write the synthetic domains as CSV
    feddadil train    --config C --out RUN      federated training into a run directory
    feddadil eval     RUN                       target accuracies of the three methods
    feddadil drift    RUN                       drift series and its trend
    feddadil figdata  DIR                       loss and drift series per E value

A run directory holds everything later verbs need:

    config.ini                      resolved configuration (data points at data/)
    data/domains.csv                client data, target rows unlabeled
    data/ground_truth/target_labels.csv
    metrics.csv                     round,client_id,local_loss,drift,wallclock_ms
    dictionary.bin                  final global dictionary
    clients/<id>/alpha.npy          each client's barycentric weights

Exit status is 0 on success, 2 for configuration or usage errors and 1 for
any other failure, with the diagnostic on stderr.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from scipy.stats import theilslopes

from .adaptation import evaluate_accuracy, feddadil_e, feddadil_r, source_only
from .config import ConfigError, dump_config, load_config
from .data import GROUND_TRUTH_DIR, TARGET_TRUTH_FILE, read_target_truth, write_domains_csv
from .dictionary import Dictionary
from .experiment import (
    DataSource,
    ExperimentConfig,
    load_data,
    read_metrics,
    run_federated,
    server_series,
)

DATA_DIR = "data"
DOMAINS_FILE = "domains.csv"


class CliError(Exception):
    pass


def _config(args) -> ExperimentConfig:
    overrides = {} if args.seed is None else {"seed": args.seed}
    if args.config is None:
        from .config import parse_config
        return parse_config("", overrides)
    return load_config(args.config, overrides)


def _require_out(args) -> Path:
    if args.out is None:
        raise ConfigError("--out is required")
    return Path(args.out)


def cmd_generate(args) -> int:
    cfg = _config(args)
    if cfg.data.kind != "synthetic":
        raise ConfigError("generate needs [data] kind = synthetic")
    out = _require_out(args)
    path = write_domains_csv(out / DOMAINS_FILE, load_data(cfg))
    print(f"wrote {path} and {out / GROUND_TRUTH_DIR / TARGET_TRUTH_FILE}")
    return 0


def _stage_data(cfg: ExperimentConfig, config_dir: Path | None, run: Path) -> ExperimentConfig:
    """Copy the client data into the run directory and point the config at it.

    Training then reads only ``data/domains.csv``; the target's ground truth
    sits in a side file that the training path never opens.
    """
    data = load_data(cfg, config_dir)
    write_domains_csv(run / DATA_DIR / DOMAINS_FILE, data,
                      cfg.data.domain_column, cfg.data.label_column)
    if cfg.data.kind == "csv" and data.target_truth is None:
        src = Path(cfg.data.path)
        if config_dir is not None and not src.is_absolute():
            src = config_dir / src
        side = src.parent / GROUND_TRUTH_DIR / TARGET_TRUTH_FILE
        if side.exists():
            (run / DATA_DIR / GROUND_TRUTH_DIR).mkdir(parents=True, exist_ok=True)
            (run / DATA_DIR / GROUND_TRUTH_DIR / TARGET_TRUTH_FILE).write_bytes(side.read_bytes())
    target = data.target.name
    return replace(cfg, data=DataSource("csv", f"{DATA_DIR}/{DOMAINS_FILE}",
                                        cfg.data.domain_column, cfg.data.label_column, target))


def train_run(cfg: ExperimentConfig, run: Path, transport: str = "inproc",
              config_dir: Path | None = None, verbose: bool = False):
    run.mkdir(parents=True, exist_ok=True)
    cfg = _stage_data(cfg, config_dir, run)
    (run / "config.ini").write_text(dump_config(cfg))
    data = load_data(cfg, run)

    def progress(m, loss):
        if verbose and (m.round == 1 or m.round % 10 == 0):
            drift = "" if m.drift is None else f" drift {m.drift.drift:.4f}"
            print(f"round {m.round:4d}  loss {loss:.4f}{drift}", flush=True)

    result = run_federated(data, cfg, transport, run / "metrics.csv", progress)
    result.state.dictionary.save(run / "dictionary.bin")
    for c in result.clients:
        d = run / "clients" / c.client_id
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "alpha.npy", c.alpha)
    return result


def cmd_train(args) -> int:
    cfg = _config(args)
    run = _require_out(args)
    config_dir = Path(args.config).parent if args.config else None
    result = train_run(cfg, run, args.transport, config_dir, verbose=True)
    print(f"finished {result.state.round} rounds; run directory {run}")
    return 0


def _run_dir(args) -> Path:
    run = Path(args.run) if args.run else _require_out(args)
    if not (run / "config.ini").exists():
        raise CliError(f"{run} is not a run directory (missing config.ini)")
    return run


def evaluate_run(run: Path) -> dict[str, float]:
    cfg = load_config(run / "config.ini")
    for needed in ("dictionary.bin", f"{DATA_DIR}/{GROUND_TRUTH_DIR}/{TARGET_TRUTH_FILE}"):
        if not (run / needed).exists():
            raise CliError(f"{run}: missing {needed}")
    data = load_data(cfg, run)
    truth = read_target_truth(run / DATA_DIR / GROUND_TRUTH_DIR / TARGET_TRUTH_FILE, data.classes)
    target = data.target
    alpha_path = run / "clients" / target.name / "alpha.npy"
    if not alpha_path.exists():
        raise CliError(f"{run}: missing {alpha_path.relative_to(run)}")
    alpha = np.load(alpha_path)
    D = Dictionary.load(run / "dictionary.bin")
    bary = replace(cfg.barycenter, beta=cfg.beta)
    X = target.features
    return {
        "source_only": evaluate_accuracy(source_only(data.datasets, cfg.classifier).predict(X), truth),
        "feddadil_r": evaluate_accuracy(feddadil_r(D, alpha, bary, cfg.classifier).predict(X), truth),
        "feddadil_e": evaluate_accuracy(feddadil_e(D, alpha, X, cfg.classifier).labels, truth),
    }


def cmd_eval(args) -> int:
    run = _run_dir(args)
    acc = evaluate_run(run)
    with open(run / "accuracy.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "accuracy"])
        for k, v in acc.items():
            w.writerow([k, repr(v)])
            print(f"{k:12s} {v:.4f}")
    return 0


def drift_summary(drift: np.ndarray) -> dict[str, float]:
    """Mean drift over the first 10 rounds and the Theil-Sen slope after the first quartile."""
    q = len(drift) // 4
    tail = drift[q:]
    slope = float(theilslopes(tail, np.arange(q, len(drift)))[0]) if len(tail) >= 2 else float("nan")
    return {"early_mean": float(np.mean(drift[:10])), "late_slope": slope}


def _metrics(run: Path):
    if not (run / "metrics.csv").exists():
        raise CliError(f"{run}: missing metrics.csv")
    return server_series(read_metrics(run / "metrics.csv"))


def cmd_drift(args) -> int:
    run = _run_dir(args)
    rounds, _, drift = _metrics(run)
    if np.isnan(drift).all():
        raise CliError(f"{run}: the run recorded no drift")
    with open(run / "drift.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", "drift"])
        w.writerows([int(r), repr(float(d))] for r, d in zip(rounds, drift))
    s = drift_summary(drift)
    print(f"mean drift, rounds 1-10: {s['early_mean']:.6f}")
    print(f"Theil-Sen slope after the first quartile: {s['late_slope']:.6e}")
    return 0


def _runs_under(path: Path) -> list[Path]:
    if (path / "metrics.csv").exists():
        return [path]
    return sorted(p for p in path.iterdir() if (p / "metrics.csv").exists() and (p / "config.ini").exists())


def figure_data(path: Path, out: Path | None = None) -> list[Path]:
    """``loss_E<E>.csv`` and ``drift_E<E>.csv`` for every run at or below ``path``."""
    runs = _runs_under(path)
    if not runs:
        raise CliError(f"no run directories under {path}")
    out = out or path
    out.mkdir(parents=True, exist_ok=True)
    seen, written = {}, []
    for run in runs:
        E = load_config(run / "config.ini").epochs
        if E in seen:
            raise CliError(f"runs {seen[E]} and {run} both have epochs = {E}")
        seen[E] = run
        rounds, loss, drift = _metrics(run)
        for name, series in (("loss", loss), ("drift", drift)):
            p = out / f"{name}_E{E}.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["round", "dil_loss" if name == "loss" else "drift"])
                w.writerows([int(r), repr(float(v))] for r, v in zip(rounds, series))
            written.append(p)
    return written


def cmd_figdata(args) -> int:
    path = Path(args.run) if args.run else _require_out(args)
    for p in figure_data(path, Path(args.out) if args.run and args.out else None):
        print(f"wrote {p}")
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "drift": cmd_drift, "figdata": cmd_figdata}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="feddadil", description="Federated dataset dictionary learning runs.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("run", nargs="?", help="run directory for eval/drift/figdata (default: --out)")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--out", help="output or run directory")
    p.add_argument("--seed", type=int, help="override [experiment] seed")
    p.add_argument("--transport", choices=("inproc", "stream"), default="inproc")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CliError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
