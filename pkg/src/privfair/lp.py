"""Small dense linear programs solved by two-phase revised simplex.

Problems are ``min c.x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and
``x >= 0``. Bland's rule is used for both entering and leaving variables,
so the method cannot cycle. Intended for the post-processing and mixture
programs, which have at most a few hundred variables.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9
MAX_PIVOTS = 50_000


@dataclass(frozen=True)
class LPResult:
    """Solver output.

    ``duals_ub`` are the nonnegative multipliers of the ``<=`` rows and
    ``duals_eq`` the free multipliers of the equality rows, with the
    convention ``c + A_ub^T duals_ub + A_eq^T duals_eq - reduced_costs = 0``
    and ``reduced_costs >= 0``.
    """

    status: str
    x: np.ndarray | None = None
    objective: float = float("nan")
    duals_ub: np.ndarray | None = None
    duals_eq: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    pivots: int = 0


def _iterate(A, b, c, basis, allowed, max_pivots):
    """Revised simplex with Bland's rule on ``min c.x, A x = b, x >= 0``.

    The basis is refactored from ``A`` at every step, so rounding errors do
    not accumulate across pivots. ``basis`` is updated in place.
    """
    d_tol = 1e-10 * (1.0 + np.abs(c).max(initial=0.0))
    pivots = 0
    while True:
        Bm = A[:, basis]
        xB = np.linalg.solve(Bm, b)
        y = np.linalg.solve(Bm.T, c[basis])
        d = c - A.T @ y
        d[basis] = 0.0
        entering = next((j for j in allowed if d[j] < -d_tol), None)
        if entering is None:
            return "optimal", pivots
        u = np.linalg.solve(Bm, A[:, entering])
        tol = PIVOT_TOL * max(1.0, np.abs(u).max())
        leave, best = None, np.inf
        for r in np.nonzero(u > tol)[0]:
            ratio = max(xB[r], 0.0) / u[r]
            tie = leave is not None and abs(ratio - best) <= 1e-12 * max(1.0, best)
            if (ratio < best and not tie) or (tie and basis[r] < basis[leave]):
                leave, best = r, ratio
        if leave is None:
            return "unbounded", pivots
        basis[leave] = entering
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("simplex exceeded its pivot budget")


def simplex(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None, max_pivots: int = MAX_PIVOTS) -> LPResult:
    """Solve ``min c.x`` over ``{A_ub x <= b_ub, A_eq x = b_eq, x >= 0}``.

    Returns:
        An :class:`LPResult` whose ``status`` is ``"optimal"``,
        ``"infeasible"`` or ``"unbounded"``.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    m_ub, m_eq = A_ub.shape[0], A_eq.shape[0]
    m = m_ub + m_eq
    N = n + m_ub
    c_std = np.concatenate([c, np.zeros(m_ub)])
    if m == 0:
        if (c < 0).any():
            return LPResult("unbounded")
        return LPResult("optimal", np.zeros(n), 0.0, np.zeros(0), np.zeros(0), c.copy(), 0)

    # standard form [x | slacks] with one slack per <= row, rhs made nonnegative
    A = np.zeros((m, N))
    A[:m_ub, :n] = A_ub
    A[:m_ub, n:] = np.eye(m_ub)
    A[m_ub:, :n] = A_eq
    b = np.concatenate([b_ub, b_eq])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign

    # phase 1: artificial variables N..N+m-1
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(N), np.ones(m)])
    basis = list(range(N, N + m))
    _, pivots = _iterate(A1, b, c1, basis, range(N + m), max_pivots)
    infeas = float(c1[basis] @ np.linalg.solve(A1[:, basis], b))
    if infeas > FEAS_TOL * max(1.0, np.abs(b).max()):
        return LPResult("infeasible", pivots=pivots)

    # swap zero-level artificials for structural columns; rows with none are redundant
    keep = list(range(m))
    r = 0
    while r < len(basis):
        if basis[r] < N:
            r += 1
            continue
        rows = A1[keep]
        v = np.linalg.solve(rows[:, basis].T, np.eye(len(basis))[r])
        row = v @ rows[:, :N]
        row[[j for j in basis if j < N]] = 0.0
        j = int(np.argmax(np.abs(row)))
        if abs(row[j]) > 1e-7:
            basis[r] = j
            pivots += 1
            r += 1
        else:
            # v combines the constraint rows to zero; drop one it actually uses
            del keep[int(np.argmax(np.abs(v)))], basis[r]

    A2, b2 = A[keep], b[keep]
    if basis:
        status, more = _iterate(A2, b2, c_std, basis, range(N), max_pivots)
        pivots += more
        if status == "unbounded":
            return LPResult("unbounded", pivots=pivots)
    elif (c_std < 0).any():
        return LPResult("unbounded", pivots=pivots)

    z = np.zeros(N)
    y_full = np.zeros(m)
    if basis:
        Bm = A2[:, basis]
        z[basis] = np.maximum(np.linalg.solve(Bm, b2), 0.0)
        # duals from the final basis: B^T y = c_B on the kept rows
        y_full[keep] = np.linalg.solve(Bm.T, c_std[basis])
    x = z[:n]
    y_full *= sign
    reduced = c - A_ub.T @ y_full[:m_ub] - A_eq.T @ y_full[m_ub:]
    return LPResult(
        "optimal",
        x=x,
        objective=float(c @ x),
        duals_ub=-y_full[:m_ub],
        duals_eq=-y_full[m_ub:],
        reduced_costs=reduced,
        pivots=pivots,
    )


def kkt_residuals(result: LPResult, c, A_ub, b_ub, A_eq=None, b_eq=None) -> dict:
    """Primal feasibility, dual feasibility (with stationarity) and complementary slackness residuals."""
    c = np.asarray(c, dtype=float)
    n = c.size
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    x = result.x
    primal = max(
        float(np.max(A_ub @ x - b_ub, initial=0.0)),
        float(np.max(-x, initial=0.0)),
        float(np.max(np.abs(A_eq @ x - b_eq), initial=0.0)),
    )
    station = c + A_ub.T @ result.duals_ub + A_eq.T @ result.duals_eq - result.reduced_costs
    dual = max(
        float(np.max(-result.duals_ub, initial=0.0)),
        float(np.max(-result.reduced_costs, initial=0.0)),
        float(np.max(np.abs(station), initial=0.0)),
    )
    slack = b_ub - A_ub @ x
    comp = max(
        float(np.max(np.abs(result.duals_ub * slack), initial=0.0)),
        float(np.max(np.abs(result.reduced_costs * x), initial=0.0)),
    )
    return {"primal": primal, "dual": dual, "complementary": comp}
