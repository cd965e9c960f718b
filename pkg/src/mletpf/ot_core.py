"""Exact discrete optimal transport and assignment solvers.

Every ensemble transform in the package reduces to one of three problems:

* the balanced transportation LP with arbitrary cost (:func:`solve_transport`),
* the same LP in one dimension with squared-distance cost, which is solved by
  matching cumulative distributions (:func:`solve_transport_1d`),
* the linear assignment problem (:func:`solve_assignment`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment

from mletpf import _simplex

__all__ = [
    "InvalidInputError",
    "InfeasibleError",
    "SolverError",
    "Coupling",
    "as_marginal",
    "squared_distance_cost",
    "solve_transport",
    "solve_transport_1d",
    "monotone_plan",
    "solve_assignment",
    "coupling_cost",
]

MARGINAL_TOL = 1e-12
FEASIBILITY_TOL = 1e-9
ZERO_MASS = 1e-12


class InvalidInputError(ValueError):
    """Malformed solver input (shapes, signs, non-finite entries)."""


class InfeasibleError(ValueError):
    """Marginals with different total mass."""


class SolverError(RuntimeError):
    """The simplex kernel failed to reach optimality."""


@dataclass(frozen=True)
class Coupling:
    """Sparse transport plan together with the marginals it was solved for."""

    matrix: sparse.csr_array
    row_marginal: np.ndarray
    col_marginal: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return int(np.count_nonzero(self.matrix.data))

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def cost(self, c: np.ndarray) -> float:
        return coupling_cost(self, c)


def as_marginal(weights, name: str = "marginal") -> np.ndarray:
    """Validate a probability vector and return it as a float array."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InvalidInputError(f"{name} must be a non-empty 1-D array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InvalidInputError(f"{name} must be finite and nonnegative")
    if abs(w.sum() - 1.0) > MARGINAL_TOL * max(1, w.size):
        raise InvalidInputError(f"{name} must sum to 1 (got {w.sum():.17g})")
    return w


def squared_distance_cost(x: np.ndarray, y: np.ndarray | None = None) -> np.ndarray:
    """Pairwise squared Euclidean distances between rows of ``x`` and ``y``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = x if y is None else np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.ndim != 1 or q.ndim != 1 or p.size == 0 or q.size == 0:
        raise InvalidInputError("marginals must be non-empty 1-D arrays")
    if p.size != q.size:
        raise InvalidInputError(f"marginal lengths differ: {p.size} != {q.size}")
    for w in (p, q):
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InvalidInputError("marginals must be finite and nonnegative")
    if abs(p.sum() - q.sum()) > FEASIBILITY_TOL:
        raise InfeasibleError(f"marginal totals differ: {p.sum():.17g} vs {q.sum():.17g}")
    return p, q


def solve_transport(p, q, c, *, max_iter: int | None = None) -> Coupling:
    """Optimal coupling of marginals ``p`` and ``q`` under cost matrix ``c``.

    The transportation simplex returns a vertex of the feasible polytope, so
    the plan has at most ``2N - 1`` nonzeros.  Support points carrying less
    than ``1e-12`` mass are dropped before solving and come back as empty
    rows or columns.
    """
    p, q = _check_pair(p, q)
    c = np.asarray(c, dtype=float)
    n = p.size
    if c.shape != (n, n):
        raise InvalidInputError(f"cost matrix must be {n}x{n}, got {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix must be finite")

    rows = np.flatnonzero(p >= ZERO_MASS)
    cols = np.flatnonzero(q >= ZERO_MASS)
    if rows.size == 0 or cols.size == 0:
        raise InfeasibleError("marginals carry no mass")
    a = p[rows]
    b = q[cols]
    total = 0.5 * (a.sum() + b.sum())
    a = a * (total / a.sum())
    b = b * (total / b.sum())
    sub = np.ascontiguousarray(c[np.ix_(rows, cols)])

    if rows.size == 1 or cols.size == 1:
        bi = np.repeat(np.arange(rows.size), cols.size)
        bj = np.tile(np.arange(cols.size), rows.size)
        flows = np.outer(a, b).ravel() / total
    else:
        scale = float(np.max(np.abs(sub))) if sub.size else 0.0
        tol = 1e-12 * max(scale, 1.0)
        limit = max_iter if max_iter is not None else 50 * sub.size + 1000
        bi, bj, flows, status, _ = _simplex.transport_simplex(
            a, b, sub, limit, tol, rows.size + cols.size
        )
        if status != _simplex.OPTIMAL:
            raise SolverError(f"transport simplex hit the iteration limit ({limit})")

    matrix = sparse.coo_array((flows, (rows[bi], cols[bj])), shape=(n, n)).tocsr()
    return Coupling(matrix, p, q)


def monotone_plan(x, p, q, y=None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Monotone (quantile-matching) plan between scalar point sets.

    Rows live at positions ``x`` with masses ``p``; columns at ``y`` (default
    ``x``) with masses ``q``.  Returns COO triplets ``(rows, cols, mass)`` of
    length ``2N``; at most ``2N - 1`` of them carry mass.
    """
    x = np.asarray(x, dtype=float)
    y = x if y is None else np.asarray(y, dtype=float)
    p, q = _check_pair(p, q)
    if x.shape != p.shape or y.shape != q.shape:
        raise InvalidInputError("positions and marginals must have the same length")
    n = p.size
    ox = np.argsort(x, kind="stable")
    oy = ox if y is x else np.argsort(y, kind="stable")
    cp = np.cumsum(p[ox])
    cq = np.cumsum(q[oy])
    total = cp[-1]
    cq *= total / cq[-1]
    cp[-1] = cq[-1] = total
    knots = np.sort(np.concatenate((cp, cq)), kind="stable")
    lower = np.concatenate(([0.0], knots[:-1]))
    mass = knots - lower
    mid = 0.5 * (knots + lower)
    ri = np.minimum(np.searchsorted(cp, mid, side="left"), n - 1)
    cj = np.minimum(np.searchsorted(cq, mid, side="left"), n - 1)
    return ox[ri], oy[cj], mass


def solve_transport_1d(values, p, q, target_values=None) -> Coupling:
    """Optimal coupling for scalar positions under squared-distance cost.

    With ``target_values`` omitted both marginals live on ``values``.  Inputs
    need not be sorted; ties are broken by original index.  Each row of the
    result has at most two nonzeros for a self-coupling with uniform target.
    """
    values = np.asarray(values, dtype=float).reshape(-1)
    if target_values is not None:
        target_values = np.asarray(target_values, dtype=float).reshape(-1)
    p, q = _check_pair(p, q)
    n = p.size
    if values.size != n or (target_values is not None and target_values.size != n):
        raise InvalidInputError("positions and marginals must have the same length")
    rows, cols, mass = monotone_plan(values, p, q, target_values)
    keep = mass > 0
    matrix = sparse.coo_array((mass[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    return Coupling(matrix, p, q)


def solve_assignment(c) -> np.ndarray:
    """Permutation ``sigma`` minimising ``sum_i c[i, sigma[i]]``.

    Backed by the Jonker-Volgenant shortest augmenting path solver in SciPy.
    """
    c = np.asarray(c, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError(f"assignment cost must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("assignment cost must be finite")
    _, sigma = linear_sum_assignment(c)
    return sigma


def coupling_cost(d, c) -> float:
    """Objective ``sum_ij D_ij c_ij`` for a coupling or a dense plan."""
    c = np.asarray(c, dtype=float)
    if isinstance(d, Coupling):
        d = d.matrix
    if sparse.issparse(d):
        if d.shape != c.shape:
            raise InvalidInputError(f"shape mismatch: {d.shape} vs {c.shape}")
        coo = sparse.coo_array(d)
        return float(np.dot(coo.data, c[coo.row, coo.col]))
    d = np.asarray(d, dtype=float)
    if d.shape != c.shape:
        raise InvalidInputError(f"shape mismatch: {d.shape} vs {c.shape}")
    return float(np.sum(d * c))
