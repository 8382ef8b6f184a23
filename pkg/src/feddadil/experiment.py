"""Federated training runs: configuration, the round loop and its metrics."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adaptation import ClassifierConfig
from .barycenter import BarycenterConfig
from .data import DomainData, SyntheticBenchmarkSpec, generate_synthetic, load_csv_domains
from .dictionary import TARGET, LossConfig
from .federation import (
    Client,
    ClientConfig,
    FederationConfig,
    RoundMetrics,
    ServerState,
    open_channels,
    run_round,
    server_init,
)

METRICS_COLUMNS = ("round", "client_id", "local_loss", "drift", "wallclock_ms")
SERVER_ID = "server"


@dataclass(frozen=True)
class DataSource:
    kind: str = "synthetic"  # or "csv"
    path: str | None = None
    domain_column: str = "domain"
    label_column: str = "label"
    target_domain: str | None = None

    def __post_init__(self):
        if self.kind not in ("synthetic", "csv"):
            raise ValueError(f"data kind must be 'synthetic' or 'csv', got {self.kind!r}")
        if self.kind == "csv" and (not self.path or self.target_domain is None):
            raise ValueError("csv data needs a path and a target_domain")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a training run depends on.

    The defaults are the tuned settings for the synthetic benchmark: a fixed
    label weight ``beta``, a separate step size for the weights and a cosine
    step-size decay over the ``rounds``.
    """

    seed: int = 0
    K: int = 3
    n_atom: int = 64
    n_b: int = 64
    rounds: int = 100
    epochs: int = 5
    lr: float = 5.0
    alpha_lr: float = 0.01
    beta: float | None = 2.0
    schedule: str = "cosine"
    batch_size: int = 64
    client_fraction: float = 1.0
    init_scale: float = 1.0
    drift: bool = True
    eval_size: int = 64  # rows per client for the global loss; 0: all rows
    record_wallclock: bool = False
    barycenter: BarycenterConfig = BarycenterConfig()
    data: DataSource = DataSource()
    synthetic: SyntheticBenchmarkSpec = SyntheticBenchmarkSpec()
    classifier: ClassifierConfig = ClassifierConfig()

    def __post_init__(self):
        checks = {
            "seed": self.seed >= 0,
            "K": self.K >= 1,
            "n_atom": self.n_atom >= 1,
            "n_b": 1 <= self.n_b <= self.n_atom,
            "rounds": self.rounds >= 1,
            "epochs": self.epochs >= 1,
            "lr": self.lr >= 0 and math.isfinite(self.lr),
            "alpha_lr": self.alpha_lr >= 0 and math.isfinite(self.alpha_lr),
            "beta": self.beta is None or (self.beta >= 0 and math.isfinite(self.beta)),
            "schedule": self.schedule in ("constant", "cosine"),
            "batch_size": self.batch_size >= 1,
            "client_fraction": 0 < self.client_fraction <= 1,
            "init_scale": self.init_scale >= 0,
            "eval_size": self.eval_size >= 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"out-of-range value for {bad[0]}: {getattr(self, bad[0])!r}")

    def loss_config(self) -> LossConfig:
        return LossConfig(beta=self.beta, barycenter=self.barycenter,
                          solver=self.barycenter.inner_solver, batch_size=self.batch_size)

    def client_config(self) -> ClientConfig:
        return ClientConfig(epochs=self.epochs, lr=self.lr, alpha_lr=self.alpha_lr,
                            schedule=self.schedule, rounds=self.rounds, loss=self.loss_config())

    def federation_config(self) -> FederationConfig:
        return FederationConfig(n_b=self.n_b, client_fraction=self.client_fraction,
                                drift=self.drift, beta=self.beta)


def load_data(cfg: ExperimentConfig, base_dir=None) -> DomainData:
    if cfg.data.kind == "synthetic":
        return generate_synthetic(cfg.synthetic, cfg.seed)
    path = Path(cfg.data.path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    return load_csv_domains(path, cfg.data.domain_column, cfg.data.label_column, cfg.data.target_domain)


def build_clients(data: DomainData, cfg: ExperimentConfig) -> list[Client]:
    """One client per domain; each gets its own seed stream."""
    ccfg = cfg.client_config()
    names = [d.name for d in data.datasets]
    if len(set(names)) != len(names):
        raise ValueError(f"domain names must be unique, got {names}")
    return [Client(d.name, d, cfg.K, ccfg, np.random.SeedSequence([cfg.seed, 1, i]))
            for i, d in enumerate(data.datasets)]


def eval_rows(clients, cfg: ExperimentConfig) -> dict[str, np.ndarray | None]:
    """Fixed row subset per client for the per-round global loss."""
    out = {}
    for i, c in enumerate(clients):
        n = c.dataset.n
        if cfg.eval_size == 0 or cfg.eval_size >= n:
            out[c.client_id] = None
        else:
            rng = np.random.default_rng([cfg.seed, 2, i])
            out[c.client_id] = np.sort(rng.choice(n, cfg.eval_size, replace=False))
    return out


@dataclass
class RunResult:
    state: ServerState
    clients: list[Client]
    metrics: list[RoundMetrics] = field(default_factory=list)
    dil_loss: list[float] = field(default_factory=list)

    @property
    def drift(self) -> list[float]:
        return [m.drift.drift if m.drift is not None else float("nan") for m in self.metrics]

    @property
    def target(self) -> Client:
        return next(c for c in self.clients if c.role == TARGET)


class MetricsWriter:
    """Append-only CSV sink; one row per participant plus a server row per round.

    The server row carries the global loss in ``local_loss`` and the round's
    drift. ``wallclock_ms`` stays empty unless requested, so that files from
    identical runs compare equal.
    """

    def __init__(self, path, record_wallclock: bool = False):
        self.path = Path(path)
        self.record_wallclock = record_wallclock
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(METRICS_COLUMNS)

    def write(self, m: RoundMetrics, global_loss: float) -> None:
        wall = f"{m.wallclock_ms:.3f}" if self.record_wallclock else ""
        drift = "" if m.drift is None else repr(float(m.drift.drift))
        with open(self.path, "a", newline="") as fh:
            w = csv.writer(fh)
            for cid in m.participants:
                w.writerow([m.round, cid, repr(float(m.local_losses[cid])), "", wall])
            w.writerow([m.round, SERVER_ID, repr(float(global_loss)), drift, wall])


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and tuple(rows[0].keys()) != METRICS_COLUMNS:
        raise ValueError(f"{path}: unexpected metrics columns {tuple(rows[0].keys())}")
    return rows


def server_series(rows) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(rounds, global loss, drift)`` from the server rows of a metrics file."""
    srv = [r for r in rows if r["client_id"] == SERVER_ID]
    rounds = np.array([int(r["round"]) for r in srv])
    loss = np.array([float(r["local_loss"]) for r in srv])
    drift = np.array([float(r["drift"]) if r["drift"] else np.nan for r in srv])
    return rounds, loss, drift


def run_federated(data: DomainData, cfg: ExperimentConfig, transport: str = "inproc",
                  metrics_path=None, progress=None) -> RunResult:
    clients = build_clients(data, cfg)
    dims = {(c.dataset.features.shape[1]) for c in clients}
    if len(dims) != 1:
        raise ValueError("clients disagree on the feature dimension")
    n_classes = next(c.dataset.labels.shape[1] for c in clients if c.dataset.labeled)
    registry = [(c.client_id, c.role) for c in clients]
    state = server_init(cfg.K, cfg.n_atom, dims.pop(), n_classes, cfg.init_scale, cfg.seed, registry)
    rows = eval_rows(clients, cfg)
    loss_cfg = cfg.loss_config()
    fed_cfg = cfg.federation_config()
    sink = MetricsWriter(metrics_path, cfg.record_wallclock) if metrics_path else None
    result = RunResult(state, clients)

    channels = open_channels(clients, transport)
    try:
        for _ in range(cfg.rounds):
            state, m = run_round(state, channels, fed_cfg)
            for c in clients:
                if c.client_id in m.participants:
                    c.wait_committed(m.round)
            loss = float(np.mean([c.evaluate(state.dictionary, loss_cfg, rows[c.client_id])
                                  for c in clients]))
            result.metrics.append(m)
            result.dil_loss.append(loss)
            if sink:
                sink.write(m, loss)
            if progress:
                progress(m, loss)
    finally:
        for ch in channels.values():
            ch.close()
    result.state = state
    return result
