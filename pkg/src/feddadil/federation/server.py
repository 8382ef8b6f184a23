"""Server orchestration: sampling, atom mini-batch broadcast, aggregation, drift."""
from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..dictionary import SOURCE, TARGET, Dictionary, init_dictionary
from ..ot import LABELED, DiscreteDistribution, wasserstein
from .channels import ClientFailure
from .codec import AtomRows, MsgType, ProtocolError, RoundMessage, atom_batch, parse_atom_version


class RoundError(RuntimeError):
    """A round was aborted; the server state is left as it was before it."""

    def __init__(self, client_id: str, reason: str):
        super().__init__(f"round aborted by client {client_id!r}: {reason}")
        self.client_id = client_id


@dataclass
class ServerState:
    dictionary: Dictionary
    round: int = 0
    registry: list[tuple[str, str]] = field(default_factory=list)  # (client_id, role)
    seed: int = 0

    def copy(self) -> "ServerState":
        return ServerState(self.dictionary.copy(), self.round, list(self.registry), self.seed)


@dataclass(frozen=True)
class FederationConfig:
    n_b: int = 64
    client_fraction: float = 1.0
    include_target: bool = True
    drift: bool = True
    beta: float | None = None  # label weight of the drift cost; None: mean feature cost

    def __post_init__(self):
        if self.n_b < 1:
            raise ValueError("n_b must be >= 1")
        if not 0 < self.client_fraction <= 1:
            raise ValueError("client_fraction must be in (0, 1]")


@dataclass
class DriftReport:
    drift: float
    # (client_a, client_b) ordered pair -> K per-atom Wasserstein terms
    terms: dict[tuple[str, str], np.ndarray] = field(default_factory=dict)


@dataclass
class RoundMetrics:
    round: int
    participants: list[str]
    selected: str
    local_losses: dict[str, float]
    drift: DriftReport | None
    wallclock_ms: float
    indices: np.ndarray


def server_init(K, n_atom, dim, n_classes, scale=1.0, seed=0, registry=()) -> ServerState:
    """Seeded initial dictionary, rounded to the float32 precision of the wire.

    Written-back rows are float32 values anyway; rounding at init means a
    round without any gradient step reproduces the dictionary exactly.
    """
    D = init_dictionary(K, n_atom, dim, n_classes, scale, np.random.default_rng([seed, 0]))
    for a in D.atoms:
        a.features = a.features.astype(np.float32).astype(float)
        a.labels = a.labels.astype(np.float32).astype(float)
    return ServerState(D, 0, list(registry), seed)


def round_rng(seed: int, round_: int) -> np.random.Generator:
    """Orchestrator randomness for one round, independent of earlier rounds."""
    return np.random.default_rng([seed, round_])


def sample_clients(registry, fraction: float, rng, always=()) -> list[str]:
    """``ceil(fraction * N)`` clients without replacement, in registry order.

    Ids in ``always`` are included first and count towards the total.
    """
    ids = [cid for cid, _ in registry] if registry and isinstance(registry[0], tuple) else list(registry)
    if not ids:
        raise ValueError("empty client registry")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    n_pick = math.ceil(round(fraction * len(ids), 9))
    forced = [cid for cid in ids if cid in set(always)]
    rest = [cid for cid in ids if cid not in set(forced)]
    n_more = max(n_pick - len(forced), 0)
    chosen = set(forced)
    if n_more:
        chosen.update(rest[i] for i in rng.choice(len(rest), n_more, replace=False))
    return [cid for cid in ids if cid in chosen]


def broadcast_atom_batch(S: ServerState, C, n_b: int, rng) -> dict[str, RoundMessage]:
    """One AtomBatch per sampled client, all carrying the same atom rows."""
    D = S.dictionary
    if n_b > D.n_atom:
        raise ValueError(f"n_b = {n_b} exceeds the {D.n_atom} points per atom")
    idx = np.sort(rng.choice(D.n_atom, n_b, replace=False))
    rows = AtomRows(idx, [a.features[idx] for a in D.atoms], [a.labels[idx] for a in D.atoms])
    msg = atom_batch(S.round + 1, rows)
    return {cid: msg for cid in C}


def _check_versions(versions: list[AtomRows]):
    if not versions:
        raise ValueError("no client versions to aggregate")
    shape = versions[0].shape
    for v in versions[1:]:
        if v.shape != shape:
            raise ValueError(f"version shapes disagree: {v.shape} vs {shape}")
        if not np.array_equal(v.indices, versions[0].indices):
            raise ValueError("versions cover different atom rows")


def server_aggregate(global_dictionary: Dictionary, versions: list[AtomRows], rng) -> tuple[Dictionary, int]:
    """Pick one version uniformly and write its rows into a copy of the global atoms.

    Returns the new dictionary and the index of the selected version.
    """
    _check_versions(versions)
    K, n_b, d, n_c = versions[0].shape
    D = global_dictionary
    if (K, d, n_c) != (D.K, D.dim, D.n_classes):
        raise ValueError("versions do not match the global dictionary")
    pick = int(rng.integers(len(versions)))
    chosen = versions[pick]
    out = D.copy()
    for atom, X, Y in zip(out.atoms, chosen.features, chosen.labels):
        atom.features[chosen.indices] = X
        atom.labels[chosen.indices] = Y
    return out, pick


def _as_distributions(version) -> list[DiscreteDistribution]:
    if isinstance(version, Dictionary):
        return version.distributions()
    return [DiscreteDistribution(X, Y) for X, Y in zip(version.features, version.labels)]


def compute_drift(versions, ids=None, beta: float | None = None) -> DriftReport:
    """Sum over ordered client pairs of the atom-averaged labeled OT cost.

    ``versions`` are Dictionary or AtomRows objects of equal shape. The cost
    is symmetric, so each unordered pair is solved once.
    """
    if len(versions) < 2:
        raise ValueError("drift needs at least two versions")
    ids = list(ids) if ids is not None else [str(i) for i in range(len(versions))]
    dists = [_as_distributions(v) for v in versions]
    shapes = {tuple((p.n, p.dim, p.n_classes) for p in ds) for ds in dists}
    if len(shapes) != 1:
        raise ValueError("versions have different shapes")
    K = len(dists[0])
    report = DriftReport(0.0)
    for a, b in itertools.combinations(range(len(versions)), 2):
        w = np.array([wasserstein(p, q, LABELED, beta) for p, q in zip(dists[a], dists[b])])
        report.terms[(ids[a], ids[b])] = w
        report.terms[(ids[b], ids[a])] = w.copy()
        report.drift += float(2.0 * w.sum() / K)
    return report


def _check_registry(registry):
    roles = [role for _, role in registry]
    if roles.count(TARGET) != 1 or roles.count(SOURCE) < 1:
        raise ValueError("a round needs at least one source and exactly one target client")


def run_round(S: ServerState, channels: dict, cfg: FederationConfig | None = None):
    """One communication round; returns ``(new_state, metrics)``.

    Messages go out in registry order and every reply is collected before
    anything is decided, so a failing client aborts the round with S intact.
    """
    cfg = cfg or FederationConfig()
    _check_registry(S.registry)
    t0 = time.perf_counter()
    r = S.round + 1
    rng = round_rng(S.seed, r)
    targets = [cid for cid, role in S.registry if role == TARGET] if cfg.include_target else []
    C = sample_clients(S.registry, cfg.client_fraction, rng, always=targets)
    msgs = broadcast_atom_batch(S, C, cfg.n_b, rng)
    for cid in C:
        channels[cid].send(msgs[cid])

    versions, losses, failures = {}, {}, {}
    for cid in C:
        try:
            reply = channels[cid].receive()
            if reply.round != r:
                raise ProtocolError(f"reply for round {reply.round}, expected {r}")
            versions[cid], losses[cid] = parse_atom_version(reply)
        except (ClientFailure, ProtocolError) as exc:
            failures[cid] = str(exc)
    if failures:
        cid = next(iter(failures))
        raise RoundError(cid, failures[cid])

    ordered = [versions[cid] for cid in C]
    try:
        D, pick = server_aggregate(S.dictionary, ordered, rng)
    except ValueError as exc:
        raise RoundError(C[0], str(exc)) from exc
    D.version_tag = (r, "server")
    drift = compute_drift(ordered, C, cfg.beta) if cfg.drift and len(C) > 1 else None
    for cid in C:
        channels[cid].send(RoundMessage(MsgType.ROUND_ACK, r))
    metrics = RoundMetrics(r, C, C[pick], losses, drift,
                           (time.perf_counter() - t0) * 1e3, versions[C[0]].indices)
    return ServerState(D, r, list(S.registry), S.seed), metrics
