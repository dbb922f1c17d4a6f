"""Dense two-phase tableau simplex with Bland's anti-cycling rule.

Solves  min c.x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  x >= 0.

The solver reports the optimal basis as column indices over the standardized
system (original variables first, then one slack per inequality row), so a
caller can freeze a basis and re-evaluate it on perturbed data.  Redundant
equality rows are detected in phase 1 and dropped; their duals are zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FEAS_TOL = 1e-9
OPT_TOL = 1e-9
PIVOT_TOL = 1e-10
PHASE1_RESIDUAL = 1e-7
REFRESH_EVERY = 64


class SimplexError(Exception):
    pass


class Infeasible(SimplexError):
    def __init__(self, residual):
        self.residual = residual
        super().__init__(f"problem infeasible (phase-1 residual {residual:.3e})")


class Unbounded(SimplexError):
    pass


@dataclass(frozen=True)
class SimplexResult:
    """Basic optimal solution of the standardized problem.

    ``x`` covers original variables plus inequality slacks; ``basis`` is the
    sorted tuple of basic column indices; ``duals`` has one entry per original
    row (equalities first, then inequalities; dropped redundant rows get 0);
    ``kept_rows`` lists the original row indices that survived phase 1.
    """

    x: np.ndarray
    objective: float
    basis: tuple
    duals: np.ndarray
    kept_rows: tuple
    iterations: int


def standardize(c, a_eq, b_eq, a_ub, b_ub):
    """Assemble [A_eq 0; A_ub I], stacked rhs, and the padded cost vector."""
    c = np.atleast_1d(np.asarray(c, dtype=float))
    n = c.shape[0]
    a_eq = np.asarray(a_eq, dtype=float).reshape(-1, n) if np.size(a_eq) else np.zeros((0, n))
    a_ub = np.asarray(a_ub, dtype=float).reshape(-1, n) if np.size(a_ub) else np.zeros((0, n))
    b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float)) if np.size(b_eq) else np.zeros(0)
    b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float)) if np.size(b_ub) else np.zeros(0)
    m_eq, m_ub = a_eq.shape[0], a_ub.shape[0]
    a = np.zeros((m_eq + m_ub, n + m_ub))
    a[:m_eq, :n] = a_eq
    a[m_eq:, :n] = a_ub
    a[m_eq:, n:] = np.eye(m_ub)
    b = np.concatenate([b_eq, b_ub])
    c_full = np.concatenate([c, np.zeros(m_ub)])
    return a, b, c_full, n, m_ub


def _pivot(tab, basis, row, col):
    tab[row] /= tab[row, col]
    for r in range(tab.shape[0]):
        if r != row and tab[r, col] != 0.0:
            tab[r] -= tab[r, col] * tab[row]
    basis[row] = col


def _refresh(tab, basis, a_all, b):
    """Recompute the tableau from the original data for the current basis."""
    bmat = a_all[:, basis]
    binv_a = np.linalg.solve(bmat, a_all)
    binv_b = np.linalg.solve(bmat, b)
    tab[:, :-1] = binv_a
    tab[:, -1] = binv_b


def _run(tab, basis, cost, allowed, a_all, b, max_iter):
    """Bland-rule simplex loop on the current tableau.

    ``allowed`` marks columns that may enter.  Returns iteration count;
    raises Unbounded when an improving column has no positive entry.
    """
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise SimplexError("pivot limit exceeded (cycling?)")
        if it % REFRESH_EVERY == 0 and a_all is not None:
            _refresh(tab, basis, a_all, b)
        cb = cost[basis]
        reduced = cost[: tab.shape[1] - 1] - cb @ tab[:, :-1]
        candidates = np.nonzero((reduced < -OPT_TOL) & allowed)[0]
        if candidates.size == 0:
            return it
        col = int(candidates[0])  # Bland: smallest index enters
        d = tab[:, col]
        rows = np.nonzero(d > PIVOT_TOL)[0]
        if rows.size == 0:
            raise Unbounded(f"column {col} yields an unbounded ray")
        ratios = tab[rows, -1] / d[rows]
        best = ratios.min()
        tied = rows[ratios <= best + FEAS_TOL]
        leave = int(tied[np.argmin([basis[r] for r in tied])])  # Bland: smallest basic index leaves
        _pivot(tab, basis, leave, col)
        rhs = tab[:, -1]
        rhs[(rhs < 0) & (rhs > -FEAS_TOL)] = 0.0  # roundoff only; larger negatives surface later


def solve(c, a_eq=(), b_eq=(), a_ub=(), b_ub=(), max_iter=100_000) -> SimplexResult:
    """Two-phase simplex; see module docstring for conventions."""
    a, b, cost, n, m_ub = standardize(c, a_eq, b_eq, a_ub, b_ub)
    m = a.shape[0]
    n_tot = n + m_ub
    row_ids = list(range(m))

    flip = np.where(b < 0, -1.0, 1.0)
    a = a * flip[:, None]
    b = b * flip

    # phase 1: artificial basis
    art = np.arange(n_tot, n_tot + m)
    tab = np.zeros((m, n_tot + m + 1))
    tab[:, :n_tot] = a
    tab[:, n_tot : n_tot + m] = np.eye(m)
    tab[:, -1] = b
    basis = list(art)
    cost1 = np.concatenate([np.zeros(n_tot), np.ones(m)])
    allowed1 = np.ones(n_tot + m, dtype=bool)
    a_all1 = np.hstack([a, np.eye(m)])
    iters = _run(tab, basis, cost1, allowed1, a_all1, b, max_iter)

    residual = float(cost1[basis] @ tab[:, -1])
    if residual > PHASE1_RESIDUAL:
        raise Infeasible(residual)

    # drive artificials out of the basis; rows that cannot pivot are redundant
    drop = []
    for r in range(m):
        if basis[r] >= n_tot:
            elig = np.nonzero(np.abs(tab[r, :n_tot]) > PIVOT_TOL)[0]
            if elig.size:
                _pivot(tab, basis, r, int(elig[0]))
            else:
                drop.append(r)
    if drop:
        keep = [r for r in range(m) if r not in drop]
        tab = tab[keep]
        basis = [basis[r] for r in keep]
        row_ids = [row_ids[r] for r in keep]
        flip_kept = flip[keep]
        a = a[keep]
        b = b[keep]
        m = len(keep)
    else:
        flip_kept = flip

    # phase 2 on the original objective, artificial columns removed
    tab = np.delete(tab, np.s_[n_tot : n_tot + len(art)], axis=1)
    allowed2 = np.ones(n_tot, dtype=bool)
    iters += _run(tab, basis, cost, allowed2, a, b, max_iter)

    x = np.zeros(n_tot)
    for r, col in enumerate(basis):
        x[col] = tab[r, -1]
    if x.min(initial=0.0) < -FEAS_TOL:
        raise SimplexError(f"basic solution has negative component {x.min():.3e}")
    x = np.maximum(x, 0.0)
    objective = float(cost @ x)

    # duals for the kept rows, mapped back through the sign flips
    bmat = a[:, basis]
    y = np.linalg.solve(bmat.T, cost[basis])
    duals_full = np.zeros(len(flip))
    for local, orig in enumerate(row_ids):
        duals_full[orig] = y[local] * flip_kept[local]

    return SimplexResult(
        x=x,
        objective=objective,
        basis=tuple(sorted(int(j) for j in basis)),
        duals=duals_full,
        kept_rows=tuple(row_ids),
        iterations=iters,
    )


def evaluate_basis(c, a_eq, b_eq, a_ub, b_ub, basis, kept_rows) -> np.ndarray:
    """Solve for the basic solution of a frozen basis on (possibly new) data.

    Returns the full standardized vector (variables + slacks); raises
    numpy.linalg.LinAlgError when the basis matrix is singular on this data.
    """
    a, b, _, _, _ = standardize(c, a_eq, b_eq, a_ub, b_ub)
    rows = list(kept_rows)
    cols = list(basis)
    bmat = a[np.ix_(rows, cols)]
    xb = np.linalg.solve(bmat, b[rows])
    x = np.zeros(a.shape[1])
    x[cols] = xb
    return x
