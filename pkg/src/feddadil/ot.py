"""Discrete optimal transport between uniform empirical distributions.

Everything in here is a deterministic function of its inputs: no RNG, no
module-level mutable state apart from a cache of LP constraint matrices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

FEATURES = "features"
LABELED = "labeled"
COST_KINDS = (FEATURES, LABELED)


class ConvergenceWarning(UserWarning):
    """Sinkhorn hit ``max_iter`` before the marginal tolerance was met."""


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Uniform empirical measure ``(1/n) sum_i delta(x_i)``.

    ``labels`` holds one class-probability row per support point, or None.
    """

    support: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        support = np.atleast_2d(np.asarray(self.support, dtype=float))
        if support.ndim != 2 or support.shape[0] < 1 or support.shape[1] < 1:
            raise ValueError(f"support must be a non-empty (n, d) matrix, got shape {support.shape}")
        if not np.all(np.isfinite(support)):
            raise ValueError("support contains non-finite entries")
        object.__setattr__(self, "support", support)
        if self.labels is not None:
            labels = np.atleast_2d(np.asarray(self.labels, dtype=float))
            if labels.shape[0] != support.shape[0]:
                raise ValueError(
                    f"labels have {labels.shape[0]} rows but support has {support.shape[0]}"
                )
            if np.any(labels < -1e-12) or not np.allclose(labels.sum(axis=1), 1.0, atol=1e-6):
                raise ValueError("label rows must lie on the probability simplex")
            object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.support.shape[0]

    @property
    def dim(self) -> int:
        return self.support.shape[1]

    @property
    def n_classes(self) -> int | None:
        return None if self.labels is None else self.labels.shape[1]


@dataclass
class OTResult:
    plan: np.ndarray
    cost: float
    converged: bool = True
    n_iter: int = 0


@dataclass(frozen=True)
class SolverConfig:
    """Which OT solver to run.

    ``epsilon`` is absolute when given; otherwise the entropic solver uses
    ``epsilon_scale * mean(C)``.
    """

    method: str = "exact"
    epsilon: float | None = None
    epsilon_scale: float = 0.01
    max_iter: int = 1000
    tol: float = 1e-9

    def __post_init__(self):
        if self.method not in ("exact", "entropic"):
            raise ValueError(f"method must be 'exact' or 'entropic', got {self.method!r}")
        if self.epsilon is not None and self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.epsilon_scale <= 0:
            raise ValueError("epsilon_scale must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


def sq_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances (exactly zero for equal rows)."""
    return cdist(X, Y, "sqeuclidean")


def resolve_beta(feature_cost: np.ndarray, beta: float | None) -> float:
    """Label-cost weight; ``None`` means the mean of the feature cost."""
    if beta is None:
        return float(feature_cost.mean())
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return float(beta)


def cost_matrix(
    P: DiscreteDistribution,
    Q: DiscreteDistribution,
    kind: str = FEATURES,
    beta: float | None = None,
) -> np.ndarray:
    """Ground cost ``||x - x'||^2`` (+ ``beta * ||y - y'||^2`` for labeled kind)."""
    if kind not in COST_KINDS:
        raise ValueError(f"unknown cost kind {kind!r}")
    if P.dim != Q.dim:
        raise ValueError(f"feature dimension mismatch: {P.dim} vs {Q.dim}")
    C = sq_distances(P.support, Q.support)
    if kind == LABELED:
        if P.labels is None or Q.labels is None:
            raise ValueError("labeled cost requires labels on both distributions")
        if P.n_classes != Q.n_classes:
            raise ValueError(f"class count mismatch: {P.n_classes} vs {Q.n_classes}")
        b = resolve_beta(C, beta)
        C = C + b * sq_distances(P.labels, Q.labels)
    return C


def _check_cost(C: np.ndarray) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.size == 0:
        raise ValueError(f"cost must be a non-empty matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix contains non-finite entries")
    return C


def _trivial_plan(C: np.ndarray) -> OTResult:
    n, m = C.shape
    plan = np.full((n, m), 1.0 / (n * m))
    return OTResult(plan, float((plan * C).sum()))


@lru_cache(maxsize=64)
def _transport_constraints(n: int, m: int):
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    A = sparse.vstack([rows, cols]).tocsr()
    # one equality is redundant (total mass); dropping it keeps HiGHS happy
    b = np.r_[np.full(n, float(m)), np.full(m, float(n))]
    return A[:-1], b[:-1]


def solve_exact(C: np.ndarray) -> OTResult:
    """Exact OT plan between uniform marginals ``1/n`` and ``1/m``.

    Equal sizes reduce to an assignment problem (the optimum is a scaled
    permutation matrix). Unequal sizes are solved as a transportation LP with
    integer-scaled marginals, whose vertex optimum is integral.
    """
    C = _check_cost(C)
    n, m = C.shape
    if n == 1 or m == 1:
        return _trivial_plan(C)
    if n == m:
        rows, cols = linear_sum_assignment(C)
        plan = np.zeros((n, n))
        plan[rows, cols] = 1.0 / n
        return OTResult(plan, float(C[rows, cols].sum() / n))

    A, b = _transport_constraints(n, m)
    res = linprog(C.ravel(), A_eq=A, b_eq=b, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transportation LP failed: {res.message}")
    counts = res.x.reshape(n, m)
    rounded = np.round(counts)
    if np.abs(counts - rounded).max() < 1e-6:
        counts = rounded
    plan = np.maximum(counts, 0.0) / (n * m)
    return OTResult(plan, float((plan * C).sum()))


def round_to_marginals(plan: np.ndarray) -> np.ndarray:
    """Project a near-feasible coupling onto the uniform transport polytope.

    Scale down over-full rows and columns, then spread the missing mass as a
    rank-one correction (Altschuler, Weed and Rigollet, 2017).
    """
    n, m = plan.shape
    a, b = np.full(n, 1.0 / n), np.full(m, 1.0 / m)
    X = plan * np.minimum(a / plan.sum(1), 1.0)[:, None]
    X = X * np.minimum(b / X.sum(0), 1.0)[None, :]
    err_r = np.maximum(a - X.sum(1), 0.0)
    err_c = np.maximum(b - X.sum(0), 0.0)
    total = err_r.sum()
    if total > 0:
        X = X + np.outer(err_r, err_c) / total
    return X


def _sinkhorn_sweeps(C, F, G, log_a, log_b, eps, n_iter, tol):
    """Log-domain Sinkhorn on potentials in cost units; returns (F, G, iters, row_err)."""
    row_err = np.inf
    it = 0
    for it in range(1, n_iter + 1):
        F = -eps * logsumexp(log_b[None, :] + (G[None, :] - C) / eps, axis=1)
        G = -eps * logsumexp(log_a[:, None] + (F[:, None] - C) / eps, axis=0)
        log_rows = log_a + logsumexp(log_b[None, :] + (F[:, None] + G[None, :] - C) / eps, axis=1)
        row_err = np.abs(np.exp(log_rows) - np.exp(log_a)).max()
        if row_err < tol:
            break
    return F, G, it, row_err


def solve_entropic(
    C: np.ndarray,
    epsilon: float | None = None,
    max_iter: int = 1000,
    tol: float = 1e-9,
) -> OTResult:
    """Entropic OT by log-domain Sinkhorn with epsilon scaling.

    Potentials are warm-started through a geometric sequence of larger
    regularisations, then iterated at ``epsilon`` until the max absolute
    row-marginal violation is below ``tol`` (columns are exact after each
    sweep). Hitting ``max_iter`` at the final ``epsilon`` emits
    :class:`ConvergenceWarning` and returns the current plan with
    ``converged=False``.
    """
    C = _check_cost(C)
    n, m = C.shape
    if epsilon is None:
        epsilon = 0.01 * float(C.mean())
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if n == 1 or m == 1:
        return _trivial_plan(C)

    log_a = np.full(n, -np.log(n))
    log_b = np.full(m, -np.log(m))
    F = np.zeros(n)
    G = np.zeros(m)
    eps = float(C.max())
    while eps > 2 * epsilon:
        F, G, _, _ = _sinkhorn_sweeps(C, F, G, log_a, log_b, eps, 50, 1e-3 / n)
        eps /= 2
    F, G, it, row_err = _sinkhorn_sweeps(C, F, G, log_a, log_b, epsilon, max_iter, tol)
    converged = row_err < tol
    plan = np.exp(log_a[:, None] + log_b[None, :] + (F[:, None] + G[None, :] - C) / epsilon)
    if not converged:
        plan = round_to_marginals(plan)
    if not converged:
        warnings.warn(
            f"Sinkhorn did not reach tol={tol:g} in {max_iter} iterations "
            f"(row marginal error {row_err:.2e})",
            ConvergenceWarning,
            stacklevel=2,
        )
    return OTResult(plan, float((plan * C).sum()), converged, it)


def solve(C: np.ndarray, config: SolverConfig | None = None) -> OTResult:
    config = config or SolverConfig()
    if config.method == "exact":
        return solve_exact(C)
    C = _check_cost(C)
    eps = config.epsilon if config.epsilon is not None else config.epsilon_scale * float(C.mean())
    if eps == 0.0:
        # zero cost everywhere: Sinkhorn is undefined, every plan is optimal
        return _trivial_plan(C)
    return solve_entropic(C, eps, config.max_iter, config.tol)


def wasserstein(
    P: DiscreteDistribution,
    Q: DiscreteDistribution,
    kind: str = FEATURES,
    beta: float | None = None,
    solver: SolverConfig | None = None,
) -> float:
    """OT cost ``<pi*, C>`` under the chosen ground cost (W_2^2 for ``features``)."""
    return solve(cost_matrix(P, Q, kind, beta), solver).cost
