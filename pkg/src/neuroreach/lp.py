"""Self-contained dense simplex solver for the small LPs in this package.

Bland's rule is used throughout, which guarantees termination on the
degenerate tableaus that conformance problems produce.  Problem sizes are
modest (tens of rows), so a dense tableau is the simplest correct choice.
"""

from __future__ import annotations

import numpy as np


class LpInfeasible(RuntimeError):
    pass


class LpUnbounded(RuntimeError):
    pass


def _pivot(T: np.ndarray, basis: np.ndarray, row: int, col: int):
    T[row] /= T[row, col]
    piv = T[row]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * piv
    basis[row] = col


def _simplex_core(T, basis, cost, tol, max_iter):
    """Maximize over tableau T (rows = constraints, last col = rhs).

    `cost` is the full objective row (length n_cols-1).  Returns the final
    reduced-cost row.  Raises LpUnbounded when an improving ray exists.
    """
    m, ncols = T.shape
    n = ncols - 1
    for _ in range(max_iter):
        # reduced costs: c_j - c_B^T B^-1 A_j
        z = cost[basis] @ T[:, :n]
        red = cost - z
        red[basis] = 0.0
        enter = -1
        for j in range(n):  # Bland: smallest improving index
            if red[j] > tol:
                enter = j
                break
        if enter < 0:
            return red
        col = T[:, enter]
        leave = -1
        best = np.inf
        for r in range(m):
            if col[r] > tol:
                ratio = T[r, -1] / col[r]
                if ratio < best - tol or (
                    abs(ratio - best) <= tol
                    and (leave < 0 or basis[r] < basis[leave])
                ):
                    best = ratio
                    leave = r
        if leave < 0:
            raise LpUnbounded("improving direction is unbounded")
        _pivot(T, basis, leave, enter)
    raise RuntimeError("simplex iteration limit reached")


def simplex_maximize(A, b, c, *, basis=None, tol: float = 1e-9, max_iter: int = 200000):
    """max c^T x  s.t.  A x = b, x >= 0.

    When `basis` (column indices forming a feasible basis) is given, phase 1
    is skipped.  Returns (x, objective, duals) where `duals` are the simplex
    multipliers of the equality rows.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, n = A.shape

    if basis is None:
        # Phase 1: minimize the sum of artificials.
        sign = np.where(b < 0, -1.0, 1.0)
        T = np.zeros((m, n + m + 1))
        T[:, :n] = A * sign[:, None]
        T[:, n : n + m] = np.eye(m)
        T[:, -1] = b * sign
        basis = np.arange(n, n + m)
        cost1 = np.concatenate([np.zeros(n), -np.ones(m)])
        _simplex_core(T, basis, cost1, tol, max_iter)
        if -(cost1[basis] @ T[:, -1]) > 1e-7:
            raise LpInfeasible("phase-1 optimum is positive")
        # Drive residual artificials out; rows that cannot pivot are redundant.
        keep = np.ones(m, dtype=bool)
        for r in range(m):
            if basis[r] >= n:
                piv = np.argmax(np.abs(T[r, :n]))
                if abs(T[r, piv]) > tol:
                    _pivot(T, basis, r, piv)
                else:
                    keep[r] = False
        T = T[keep][:, list(range(n)) + [n + m]]
        basis = basis[keep]
        m = T.shape[0]
    else:
        T = np.zeros((m, n + 1))
        T[:, :n] = A
        T[:, -1] = b
        basis = np.asarray(basis, dtype=int).copy()
        Bmat = T[:, basis].copy()
        T[:] = np.linalg.solve(Bmat, T)

    cost = c.astype(float).copy()
    red = _simplex_core(T, basis, cost, tol, max_iter)

    x = np.zeros(n)
    x[basis] = T[:, -1]
    obj = float(cost @ x)
    # Simplex multipliers pi = c_B B^-1, recovered from reduced costs of an
    # identity-bearing column set is fragile; recompute directly instead.
    Bmat = A[:, basis] if A.shape[0] == m else None
    if Bmat is not None and Bmat.shape[0] == Bmat.shape[1]:
        duals = np.linalg.solve(Bmat.T, cost[basis])
    else:
        duals = None
    return x, obj, duals


def solve_covering_lp(A, b, c, *, tol: float = 1e-9):
    """min c^T v  s.t.  A v >= b, v >= 0  with A >= 0 elementwise, c >= 0.

    Solved through the dual (max b^T y s.t. A^T y <= c, y >= 0), whose slack
    basis is immediately feasible; the primal optimum is read off the duals.
    Rows with b_i <= 0 must be pruned by the caller.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    m, n = A.shape
    if m == 0:
        return np.zeros(n), 0.0
    zero_rows = np.where((np.abs(A).sum(axis=1) <= tol) & (b > tol))[0]
    if zero_rows.size:
        raise LpInfeasible(f"all-zero constraint rows with positive demand: {zero_rows.tolist()}")
    # Dual in standard form: [A^T  I] [y; s] = c.
    H = np.hstack([A.T, np.eye(n)])
    g = np.concatenate([b, np.zeros(n)])
    basis0 = np.arange(m, m + n)
    _, obj, duals = simplex_maximize(H, c, g, basis=basis0, tol=tol)
    v = np.maximum(duals, 0.0)
    return v, obj


def zonotope_membership_lp(G, d, tol: float = 1e-7) -> bool:
    """Feasibility of G beta = d with beta in [-1, 1]^g (phase-1 only)."""
    G = np.asarray(G, dtype=float)
    d = np.asarray(d, dtype=float)
    n, g = G.shape
    if g == 0:
        return bool(np.max(np.abs(d), initial=0.0) <= tol)
    # beta = 2 sigma - 1 with sigma in [0, 1].
    dprime = 0.5 * (d + G.sum(axis=1))
    A = np.zeros((n + g, 2 * g))
    A[:n, :g] = G
    A[n:, :g] = np.eye(g)
    A[n:, g:] = np.eye(g)
    rhs = np.concatenate([dprime, np.ones(g)])
    try:
        x, _, _ = simplex_maximize(A, rhs, np.zeros(2 * g), tol=1e-10)
    except LpInfeasible:
        return False
    sigma = x[:g]
    return bool(np.max(np.abs(G @ (2.0 * sigma - 1.0) - d)) <= tol)


def solve_min_infnorm_underdetermined(G, d):
    """min ||beta||_inf s.t. G beta = d; returns None when inconsistent.

    Used as an exact fallback for zonotope membership: the answer is a
    certificate whenever the optimal norm is <= 1.
    """
    G = np.asarray(G, dtype=float)
    d = np.asarray(d, dtype=float)
    n, g = G.shape
    # Variables: sigma (g, = (beta+t)/ (2t) scaled form is nonlinear) -- use
    # the standard split: beta = p - q, p,q >= 0; p_j + q_j <= t.
    # Columns: [p (g), q (g), t (1), slack u (g)].
    A = np.zeros((n + g, 2 * g + 1 + g))
    A[:n, :g] = G
    A[:n, g : 2 * g] = -G
    A[n:, :g] = np.eye(g)
    A[n:, g : 2 * g] = np.eye(g)
    A[n:, 2 * g] = -1.0
    A[n:, 2 * g + 1 :] = np.eye(g)
    rhs = np.concatenate([d, np.zeros(g)])
    cost = np.zeros(2 * g + 1 + g)
    cost[2 * g] = -1.0  # maximize -t
    try:
        x, _, _ = simplex_maximize(A, rhs, cost, tol=1e-10)
    except LpInfeasible:
        return None
    return x[:g] - x[g : 2 * g]
