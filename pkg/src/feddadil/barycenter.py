"""Free-support Wasserstein barycenters of labeled empirical distributions."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ot import (
    FEATURES,
    LABELED,
    DiscreteDistribution,
    SolverConfig,
    cost_matrix,
    resolve_beta,
    solve,
    solve_exact,
    sq_distances,
)
from .simplex import simplex_project

INIT_RULES = ("weighted-mean", "copy-largest")


@dataclass(frozen=True)
class BarycenterConfig:
    support_size: int | None = None  # None: size of the atoms
    fixed_point_iters: int = 10
    inner_solver: SolverConfig = SolverConfig()
    init_rule: str = "weighted-mean"
    beta: float | None = None  # None: mean feature cost to the atoms at init, then fixed

    def __post_init__(self):
        if self.support_size is not None and self.support_size < 1:
            raise ValueError("support_size must be >= 1")
        if self.fixed_point_iters < 1:
            raise ValueError("fixed_point_iters must be >= 1")
        if self.init_rule not in INIT_RULES:
            raise ValueError(f"init_rule must be one of {INIT_RULES}, got {self.init_rule!r}")
        if self.beta is not None and self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass
class Barycenter:
    """Output of :func:`free_support_barycenter`.

    ``maps[k]`` is ``n_B * plan_k`` from the last support update, so that the
    returned support equals ``sum_k alpha_k * maps[k] @ atoms[k].support``.
    ``history`` holds the objective at the initial support and after every
    update.
    """

    distribution: DiscreteDistribution
    final_objective: float
    betas: np.ndarray
    maps: list[np.ndarray]
    history: list[float] = field(default_factory=list)


def check_weights(alpha, K: int) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float).ravel()
    if alpha.shape != (K,):
        raise ValueError(f"expected {K} barycentric weights, got {alpha.shape[0]}")
    if not np.all(np.isfinite(alpha)) or alpha.min() < -1e-6 or abs(alpha.sum() - 1.0) > 1e-6:
        raise ValueError(f"weights {alpha} are not on the simplex (tol 1e-6)")
    return alpha


def _check_atoms(atoms: Sequence[DiscreteDistribution]) -> bool:
    if len(atoms) == 0:
        raise ValueError("need at least one atom")
    d = atoms[0].dim
    if any(a.dim != d for a in atoms):
        raise ValueError("atoms have different feature dimensions")
    labeled = all(a.labels is not None for a in atoms)
    if labeled and len({a.n_classes for a in atoms}) != 1:
        raise ValueError("atoms have different numbers of classes")
    return labeled


def _betas(beta, K: int) -> np.ndarray:
    if beta is None:
        raise ValueError("beta must be given")
    b = np.broadcast_to(np.asarray(beta, dtype=float), (K,)).copy()
    if np.any(b < 0):
        raise ValueError("beta must be non-negative")
    return b


def _initial_support(atoms, alpha, size, rule):
    sizes = {a.n for a in atoms}
    labeled = atoms[0].labels is not None
    if rule == "weighted-mean" and sizes == {size}:
        X = sum(w * a.support for w, a in zip(alpha, atoms))
        Y = sum(w * a.labels for w, a in zip(alpha, atoms)) if labeled else None
        return X, Y
    # copy of the heaviest atom; argmax resolves ties to the lowest index
    src = atoms[int(np.argmax(alpha))]
    X = np.resize(src.support, (size, src.dim))
    Y = np.resize(src.labels, (size, src.n_classes)) if labeled else None
    return X, Y


def _pair_cost(X, Y, atom, beta):
    C = sq_distances(X, atom.support)
    if Y is not None:
        C = C + beta * sq_distances(Y, atom.labels)
    return C


def free_support_barycenter(
    atoms: Sequence[DiscreteDistribution],
    alpha,
    cfg: BarycenterConfig | None = None,
) -> Barycenter:
    """Fixed-point free-support barycenter ``argmin_B sum_k alpha_k W_c(P_k, B)``.

    Alternates between solving the K plans from the current support to each
    atom and moving every support point (and label row) to the
    alpha-weighted barycentric projection of its plans. Labels are carried
    when every atom has them; the cost is then the labeled one.
    """
    cfg = cfg or BarycenterConfig()
    labeled = _check_atoms(atoms)
    K = len(atoms)
    alpha = check_weights(alpha, K)
    size = cfg.support_size or atoms[0].n

    X, Y = _initial_support(atoms, alpha, size, cfg.init_rule)
    if labeled:
        if cfg.beta is None:
            # one shared weight, so the label update below stays the exact minimiser
            auto = np.mean([resolve_beta(sq_distances(X, a.support), None) for a in atoms])
            betas = np.full(K, auto)
        else:
            betas = _betas(cfg.beta, K)
    else:
        betas = np.zeros(K)

    def solve_all(X, Y):
        results = [solve(_pair_cost(X, Y, a, b), cfg.inner_solver) for a, b in zip(atoms, betas)]
        objective = float(sum(w * r.cost for w, r in zip(alpha, results)))
        return [r.plan for r in results], objective

    plans, objective = solve_all(X, Y)
    history = [objective]
    maps = None
    for _ in range(cfg.fixed_point_iters):
        maps = [size * p for p in plans]
        X = sum(w * T @ a.support for w, T, a in zip(alpha, maps, atoms))
        if labeled:
            Y = simplex_project(sum(w * T @ a.labels for w, T, a in zip(alpha, maps, atoms)))
        new_plans, objective = solve_all(X, Y)
        history.append(objective)
        stalled = all(np.array_equal(p, q) for p, q in zip(plans, new_plans))
        plans = new_plans
        if stalled:
            # same plans would reproduce the same support
            break
    return Barycenter(
        distribution=DiscreteDistribution(X, Y),
        final_objective=max(objective, 0.0),
        betas=betas,
        maps=maps,
        history=history,
    )


def evaluate_barycenter_objective(
    atoms: Sequence[DiscreteDistribution],
    alpha,
    B: DiscreteDistribution,
    beta=None,
) -> float:
    """``sum_k alpha_k W_c(P_k, B)`` with the exact solver.

    ``beta`` may be a scalar, one value per atom, or None (mean feature cost
    of each pair). The labeled cost is used when B and all atoms carry labels.
    """
    labeled = _check_atoms(atoms) and B.labels is not None
    alpha = check_weights(alpha, len(atoms))
    kind = LABELED if labeled else FEATURES
    betas = [None] * len(atoms) if beta is None else _betas(beta, len(atoms))
    total = 0.0
    for w, atom, b in zip(alpha, atoms, betas):
        total += w * solve_exact(cost_matrix(atom, B, kind, b)).cost
    return float(total)
