import numpy as np

# vectors already within this distance of the simplex are returned untouched,
# which makes the projection exactly idempotent
_ON_SIMPLEX_ATOL = 1e-12


def simplex_project(v):
    """Euclidean projection onto the probability simplex.

    Works on a single vector or row-wise on a 2-D array, using the
    sort-and-threshold rule: ``u = max(v - theta, 0)`` with ``theta`` chosen
    so that ``u`` sums to one.

    >>> simplex_project(np.array([0.5, 0.5, 0.5]))
    array([0.33333333, 0.33333333, 0.33333333])
    """
    V = np.asarray(v, dtype=float)
    if V.ndim == 1:
        return simplex_project(V[None, :])[0]
    if V.ndim != 2 or V.shape[1] == 0:
        raise ValueError(f"expected a vector or matrix, got shape {V.shape}")
    if not np.all(np.isfinite(V)):
        raise ValueError("cannot project non-finite values")

    out = V.copy()
    on = (V.min(axis=1) >= 0) & (np.abs(V.sum(axis=1) - 1.0) <= _ON_SIMPLEX_ATOL)
    todo = ~on
    if todo.any():
        W = V[todo]
        U = -np.sort(-W, axis=1)
        css = np.cumsum(U, axis=1) - 1.0
        ind = np.arange(1, W.shape[1] + 1)
        rho = np.count_nonzero(U - css / ind > 0, axis=1)
        theta = css[np.arange(W.shape[0]), rho - 1] / rho
        out[todo] = np.maximum(W - theta[:, None], 0.0)
    return out
