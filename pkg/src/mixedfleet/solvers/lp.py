"""Dense two-phase simplex with dual extraction.

Problems in this package are small (a few dozen columns at most), so a dense
tableau is the simplest thing that is also fast. After the pivoting finishes
the primal and dual values are recomputed from the final basis with a direct
solve, which removes the round-off accumulated over the pivots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..settings import SETTINGS
from . import _kernels

__all__ = ["LinearProgram", "SolveResult", "solve_lp"]


@dataclass
class LinearProgram:
    """``maximize c@x  s.t.  A_ub@x <= b_ub,  A_eq@x == b_eq,  x >= 0``."""

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A_ub, self.b_ub = _rows(self.A_ub, self.b_ub, n, "ub")
        self.A_eq, self.b_eq = _rows(self.A_eq, self.b_eq, n, "eq")
        for name in ("c", "b_ub", "b_eq"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")

    @property
    def n(self) -> int:
        return self.c.size


def _rows(A, b, n, tag):
    if A is None:
        if b is not None and np.size(b):
            raise ValueError(f"b_{tag} given without A_{tag}")
        return np.zeros((0, n)), np.zeros(0)
    A = np.atleast_2d(np.asarray(A, dtype=float))
    b = np.asarray(b, dtype=float).ravel()
    if A.shape[1] != n or A.shape[0] != b.size:
        raise ValueError(f"A_{tag} has shape {A.shape}, expected ({b.size}, {n})")
    return A, b


@dataclass
class SolveResult:
    x: np.ndarray
    duals: np.ndarray
    objective: float
    status: str
    iterations: int
    eq_duals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_lp(lp: LinearProgram, max_iter: int = 5000, dantzig_iters: int = 50) -> SolveResult:
    """Solve ``lp``; ``duals`` are the multipliers of the ``<=`` rows.

    Status is one of ``optimal``, ``infeasible``, ``unbounded`` or
    ``numerical`` (pivoting finished but the recomputed solution misses the
    residual tolerance).
    """
    tol = SETTINGS.pivot_tol
    n = lp.n
    mu, me = lp.b_ub.size, lp.b_eq.size
    m = mu + me
    A = np.zeros((m, n + mu))
    A[:mu, :n] = lp.A_ub
    A[:mu, n:] = np.eye(mu)
    A[mu:, :n] = lp.A_eq
    b = np.concatenate([lp.b_ub, lp.b_eq])
    sign = np.where(b < 0, -1.0, 1.0)
    A *= sign[:, None]
    b = b * sign

    needs_art = np.ones(m, dtype=bool)
    needs_art[:mu] = sign[:mu] < 0
    art_rows = np.flatnonzero(needs_art)
    n_std = n + mu
    ncol = n_std + art_rows.size

    T = np.zeros((m + 1, ncol + 1))
    T[:m, :n_std] = A
    T[art_rows, n_std + np.arange(art_rows.size)] = 1.0
    T[:m, -1] = b
    basis = np.empty(m, dtype=np.int64)
    basis[:] = n + np.arange(m)  # slack for <= rows
    basis[art_rows] = n_std + np.arange(art_rows.size)

    iters = 0
    allowed = np.ones(ncol, dtype=np.bool_)
    if art_rows.size:
        # phase one: maximise minus the sum of artificials
        T[m, :] = 0.0
        T[m, n_std:ncol] = 1.0
        for i in art_rows:
            T[m, :] -= T[i, :]
        status, it = _kernels.simplex_iterate(T, basis, allowed, max_iter, dantzig_iters, tol)
        iters += it
        if status != _kernels.OPTIMAL or T[m, -1] < -SETTINGS.feas_tol * (1.0 + np.abs(b).max()):
            if status == _kernels.ITERATION_LIMIT:
                return _fail(n, mu, me, "numerical", iters)
            return _fail(n, mu, me, "infeasible", iters)
        redundant = _kernels.drive_out_artificials(T, basis, n_std, tol)
    else:
        redundant = np.zeros(m, dtype=np.bool_)

    # phase two
    allowed[n_std:] = False
    cost = np.zeros(ncol)
    cost[:n] = lp.c
    T[m, :] = -np.append(cost, 0.0)
    for i in range(m):
        cb = cost[basis[i]]
        if cb != 0.0:
            T[m, :] += cb * T[i, :]
    status, it = _kernels.simplex_iterate(T, basis, allowed, max_iter, dantzig_iters, tol)
    iters += it
    if status == _kernels.UNBOUNDED:
        return _fail(n, mu, me, "unbounded", iters)
    if status == _kernels.ITERATION_LIMIT:
        return _fail(n, mu, me, "numerical", iters)

    keep = ~redundant
    rows = np.flatnonzero(keep)
    bcols = basis[rows]
    B = A[rows][:, bcols]
    xfull = np.zeros(n_std)
    try:
        xb = np.linalg.solve(B, b[rows])
        y_rows = np.linalg.solve(B.T, cost[bcols])
    except np.linalg.LinAlgError:
        return _fail(n, mu, me, "numerical", iters)
    xb[np.abs(xb) < 1e-13] = 0.0
    xfull[bcols] = xb
    y = np.zeros(m)
    y[rows] = y_rows
    y *= sign  # back to the original row orientation
    x = xfull[:n].copy()
    x[(x < 0) & (x > -SETTINGS.feas_tol)] = 0.0
    duals = y[:mu].copy()
    eq_duals = y[mu:].copy()

    res = _residuals(lp, x, duals, eq_duals)
    scale = 1.0 + np.abs(lp.c).max(initial=0.0) + np.abs(b).max(initial=0.0)
    ok = max(res.values()) <= SETTINGS.solver_tol * scale
    return SolveResult(
        x=x,
        duals=np.maximum(duals, 0.0),
        objective=float(lp.c @ x),
        status="optimal" if ok else "numerical",
        iterations=iters,
        eq_duals=eq_duals,
        residuals=res,
    )


def _residuals(lp, x, y_ub, y_eq):
    primal = max(
        np.max(lp.A_ub @ x - lp.b_ub, initial=0.0),
        np.max(np.abs(lp.A_eq @ x - lp.b_eq), initial=0.0),
        np.max(-x, initial=0.0),
    )
    reduced = lp.c - lp.A_ub.T @ y_ub - lp.A_eq.T @ y_eq
    dual = max(np.max(reduced, initial=0.0), np.max(-y_ub, initial=0.0))
    slack = lp.b_ub - lp.A_ub @ x
    comp = max(np.max(np.abs(y_ub * slack), initial=0.0), np.max(np.abs(reduced * x), initial=0.0))
    gap = abs(lp.c @ x - (lp.b_ub @ y_ub + lp.b_eq @ y_eq))
    return {"primal": float(primal), "dual": float(dual), "complementarity": float(comp), "gap": float(gap)}


def _fail(n, mu, me, status, iters):
    return SolveResult(
        x=np.zeros(n),
        duals=np.zeros(mu),
        objective=float("nan"),
        status=status,
        iterations=iters,
        eq_duals=np.zeros(me),
    )
