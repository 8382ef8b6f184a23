"""Dictionary of labeled empirical distributions and its local optimisation.

A client models its data as the barycenter of the dictionary atoms under
private weights ``alpha``. The loss is the OT cost between a client batch and
that barycenter: labeled cost for labeled clients, plain squared-Euclidean
cost otherwise.

Gradients use envelope differentiation. Every transport plan (the K plans
of the last barycenter update and the batch-to-barycenter plan) is frozen,
which makes the loss a quadratic in atom points and label rows and a
bilinear function of ``alpha`` through the maps ``n_B * plan_k``.
"""
from __future__ import annotations

import copy
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .barycenter import Barycenter, BarycenterConfig, check_weights, free_support_barycenter
from .ot import DiscreteDistribution, SolverConfig, resolve_beta, solve, sq_distances
from .simplex import simplex_project

SOURCE = "source"
TARGET = "target"

DICT_MAGIC = b"FDDD"
_DICT_HEADER = struct.Struct("<4s5I")  # magic, K, n_atom, d, n_c, round


@dataclass
class Atom:
    features: np.ndarray
    labels: np.ndarray
    atom_id: int = 0

    def to_distribution(self) -> DiscreteDistribution:
        return DiscreteDistribution(self.features, self.labels)


@dataclass
class Dictionary:
    atoms: list[Atom]
    version_tag: tuple[int, str] = (0, "server")

    def __post_init__(self):
        if not self.atoms:
            raise ValueError("a dictionary needs at least one atom")
        shapes = {(a.features.shape, a.labels.shape) for a in self.atoms}
        if len(shapes) != 1:
            raise ValueError(f"atoms disagree on shape: {sorted(shapes)}")
        (fs, ls), = shapes
        if len(fs) != 2 or len(ls) != 2 or fs[0] != ls[0]:
            raise ValueError(f"bad atom shapes: features {fs}, labels {ls}")

    @property
    def K(self) -> int:
        return len(self.atoms)

    @property
    def n_atom(self) -> int:
        return self.atoms[0].features.shape[0]

    @property
    def dim(self) -> int:
        return self.atoms[0].features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.atoms[0].labels.shape[1]

    def distributions(self) -> list[DiscreteDistribution]:
        return [a.to_distribution() for a in self.atoms]

    def copy(self) -> "Dictionary":
        return copy.deepcopy(self)

    def equals(self, other: "Dictionary") -> bool:
        """Bitwise equality of all atom parameters."""
        return self.K == other.K and all(
            np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
            for a, b in zip(self.atoms, other.atoms)
        )

    def to_bytes(self) -> bytes:
        """Header (magic, K, n_atom, d, n_c, round as u32) then per atom
        features and labels as little-endian float64."""
        parts = [_DICT_HEADER.pack(DICT_MAGIC, self.K, self.n_atom, self.dim,
                                   self.n_classes, self.version_tag[0])]
        for a in self.atoms:
            parts.append(np.ascontiguousarray(a.features, "<f8").tobytes())
            parts.append(np.ascontiguousarray(a.labels, "<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Dictionary":
        if len(raw) < _DICT_HEADER.size:
            raise ValueError("dictionary file is truncated")
        magic, K, n, d, n_c, rnd = _DICT_HEADER.unpack_from(raw)
        if magic != DICT_MAGIC:
            raise ValueError(f"not a dictionary file (magic {magic!r})")
        if len(raw) != _DICT_HEADER.size + 8 * K * n * (d + n_c):
            raise ValueError("dictionary file size does not match its header")
        off, atoms = _DICT_HEADER.size, []
        for k in range(K):
            X = np.frombuffer(raw, "<f8", n * d, off).reshape(n, d).copy()
            off += 8 * n * d
            Y = np.frombuffer(raw, "<f8", n * n_c, off).reshape(n, n_c).copy()
            off += 8 * n * n_c
            atoms.append(Atom(X, Y, k))
        return cls(atoms, (rnd, "server"))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Dictionary":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


@dataclass
class ClientDataset:
    features: np.ndarray
    labels: np.ndarray | None = None
    role: str = SOURCE
    name: str = ""

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        if self.role not in (SOURCE, TARGET):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role == TARGET and self.labels is not None:
            raise ValueError("a target dataset must not carry labels")
        if self.role == SOURCE:
            if self.labels is None:
                raise ValueError("a source dataset needs labels")
            self.labels = np.asarray(self.labels, dtype=float)
            if self.labels.shape[0] != self.features.shape[0]:
                raise ValueError("labels and features have different row counts")
            if not (np.isin(self.labels, (0.0, 1.0)).all() and np.all(self.labels.sum(1) == 1)):
                raise ValueError("source labels must be one-hot rows")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def labeled(self) -> bool:
        return self.labels is not None


@dataclass(frozen=True)
class LossConfig:
    """Settings shared by the loss, its gradients and the local updates.

    ``beta`` applies both to the barycenter's inner plans and to the
    batch-to-barycenter cost; ``None`` means "mean feature cost", evaluated
    on the current inputs and treated as a constant when differentiating.
    """

    beta: float | None = None
    barycenter: BarycenterConfig = BarycenterConfig()
    solver: SolverConfig = SolverConfig()
    batch_size: int = 64

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass
class LossEvaluation:
    """Loss value, frozen plans and gradients for one client batch."""

    loss: float
    barycenter: Barycenter
    plan: np.ndarray  # batch x barycenter
    beta: float
    grad_features: list[np.ndarray] = field(default_factory=list)
    grad_labels: list[np.ndarray] = field(default_factory=list)
    grad_alpha: np.ndarray | None = None


def init_dictionary(K, n_atom, dim, n_classes, scale=1.0, rng=None) -> Dictionary:
    """Data-free atom initialisation.

    Features are ``scale * N(0, I)``; label rows are uniform plus Dirichlet(1)
    noise, projected back onto the simplex.
    """
    for name, v in (("K", K), ("n_atom", n_atom), ("dim", dim), ("n_classes", n_classes)):
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer, got {v!r}")
    if scale < 0:
        raise ValueError("scale must be non-negative")
    rng = np.random.default_rng(rng)
    atoms = []
    for k in range(K):
        X = scale * rng.standard_normal((n_atom, dim))
        Y = simplex_project(np.full((n_atom, n_classes), 1.0 / n_classes)
                            + rng.dirichlet(np.ones(n_classes), size=n_atom))
        atoms.append(Atom(X, Y, k))
    return Dictionary(atoms, (0, "server"))


def _check_batch(features, D: Dictionary):
    features = np.atleast_2d(np.asarray(features, dtype=float))
    if features.shape[0] == 0:
        raise ValueError("empty batch")
    if features.shape[1] != D.dim:
        raise ValueError(f"batch has {features.shape[1]} features, dictionary has {D.dim}")
    return features


def evaluate(features, labels, alpha, D: Dictionary, cfg: LossConfig | None = None,
             gradients: bool = True) -> LossEvaluation:
    """Loss of one batch against ``B(alpha; D)`` and, optionally, its gradients.

    ``labels`` is None for unlabeled clients, which switches to the
    features-only cost and leaves label gradients at zero.
    """
    cfg = cfg or LossConfig()
    Xq = _check_batch(features, D)
    alpha = check_weights(alpha, D.K)
    atoms = D.distributions()
    bary = free_support_barycenter(atoms, alpha, replace(cfg.barycenter, beta=cfg.beta))
    XB, YB = bary.distribution.support, bary.distribution.labels

    C = sq_distances(Xq, XB)
    beta = 0.0
    if labels is not None:
        Yq = np.atleast_2d(np.asarray(labels, dtype=float))
        if Yq.shape != (Xq.shape[0], D.n_classes):
            raise ValueError(f"labels shape {Yq.shape} does not match batch/dictionary")
        beta = resolve_beta(C, cfg.beta)
        C = C + beta * sq_distances(Yq, YB)
    res = solve(C, cfg.solver)
    out = LossEvaluation(max(res.cost, 0.0), bary, res.plan, beta)
    if not gradients:
        return out

    pi = res.plan
    mass = pi.sum(axis=0)[:, None]
    G_X = 2.0 * (mass * XB - pi.T @ Xq)
    G_Y = 2.0 * beta * (mass * YB - pi.T @ Yq) if labels is not None else None
    grad_alpha = np.zeros(D.K)
    for k, (w, T, atom) in enumerate(zip(alpha, bary.maps, D.atoms)):
        out.grad_features.append(w * T.T @ G_X)
        grad_alpha[k] = np.sum(G_X * (T @ atom.features))
        if G_Y is None:
            out.grad_labels.append(np.zeros_like(atom.labels))
        else:
            out.grad_labels.append(w * T.T @ G_Y)
            grad_alpha[k] += np.sum(G_Y * (T @ atom.labels))
    out.grad_alpha = grad_alpha
    return out


def local_loss(features, labels, alpha, D: Dictionary, cfg: LossConfig | None = None) -> float:
    return evaluate(features, labels, alpha, D, cfg, gradients=False).loss


def loss_gradients(features, labels, alpha, D: Dictionary, cfg: LossConfig | None = None):
    """``(d/d features per atom, d/d labels per atom, d/d alpha)`` with frozen plans."""
    ev = evaluate(features, labels, alpha, D, cfg)
    return ev.grad_features, ev.grad_labels, ev.grad_alpha


@dataclass
class UpdateResult:
    dictionary: Dictionary
    alpha: np.ndarray
    losses: np.ndarray  # (epochs, batches), loss before each step


def _epoch_batches(n, batch_size, n_batches, rng):
    batch_size = min(batch_size, n)
    perm = rng.permutation(n)
    pos = 0
    for _ in range(n_batches):
        if pos + batch_size > n:
            perm = rng.permutation(n)
            pos = 0
        yield perm[pos:pos + batch_size]
        pos += batch_size


def client_update(
    D_local: Dictionary,
    alpha,
    data: ClientDataset,
    epochs: int = 1,
    batches: int | None = None,
    lr: float = 0.1,
    cfg: LossConfig | None = None,
    rng=None,
    alpha_lr: float | None = None,
) -> UpdateResult:
    """Local SGD on a copy of the dictionary and on the client's ``alpha``.

    Each step moves atom features and labels (labels re-projected row-wise)
    and ``alpha`` (projected onto the simplex) along the frozen-plan
    gradient. ``batches`` defaults to ``n // batch_size`` per epoch;
    ``alpha_lr`` defaults to ``lr``. Batches come from ``rng`` shuffles, so a
    seeded generator makes the update reproducible.
    """
    cfg = cfg or LossConfig()
    if data.n == 0:
        raise ValueError("client dataset is empty")
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    alpha_lr = lr if alpha_lr is None else alpha_lr
    rng = np.random.default_rng(rng)
    if batches is None:
        batches = max(1, data.n // cfg.batch_size)

    D = D_local.copy()
    alpha = check_weights(alpha, D.K).copy()
    losses = np.zeros((epochs, batches))
    for e in range(epochs):
        for b, idx in enumerate(_epoch_batches(data.n, cfg.batch_size, batches, rng)):
            labels = data.labels[idx] if data.labeled else None
            ev = evaluate(data.features[idx], labels, alpha, D, cfg)
            losses[e, b] = ev.loss
            if lr > 0:
                for atom, gX, gY in zip(D.atoms, ev.grad_features, ev.grad_labels):
                    atom.features = atom.features - lr * gX
                    if data.labeled:
                        atom.labels = simplex_project(atom.labels - lr * gY)
            if alpha_lr > 0:
                alpha = simplex_project(alpha - alpha_lr * ev.grad_alpha)
    return UpdateResult(D, alpha, losses)


def dil_loss(datasets, alphas, D: Dictionary, cfg: LossConfig | None = None) -> float:
    """Average over clients of each client's full-data loss."""
    if len(datasets) != len(alphas) or not datasets:
        raise ValueError("need one alpha per dataset")
    total = 0.0
    for data, alpha in zip(datasets, alphas):
        total += local_loss(data.features, data.labels, alpha, D, cfg)
    return total / len(datasets)
