"""Hot inner loops: tableau simplex pivoting and barrier Newton iterations.

Everything here takes and returns plain float64/int64 arrays so the same
source runs under ``numba.njit`` or as ordinary Python (see ``_jit``).
"""

import numpy as np

from .._jit import maybe_njit

OPTIMAL = 0
UNBOUNDED = 1
ITERATION_LIMIT = 2


@maybe_njit
def _pivot(T, basis, row, col):
    m1, w = T.shape
    piv = T[row, col]
    for j in range(w):
        T[row, j] /= piv
    for i in range(m1):
        if i == row:
            continue
        f = T[i, col]
        if f != 0.0:
            for j in range(w):
                T[i, j] -= f * T[row, j]
            T[i, col] = 0.0
    T[row, col] = 1.0
    basis[row] = col


@maybe_njit
def simplex_iterate(T, basis, allowed, max_iter, dantzig_iters, tol):
    """Run primal simplex pivots on a tableau in place.

    ``T`` has the constraint rows first and the reduced-cost row last; the last
    column is the right-hand side. Reduced costs follow the ``z_j - c_j``
    convention of a maximisation, so a column may enter while its entry is
    below ``-tol``. Pricing is Dantzig's rule for the first ``dantzig_iters``
    pivots and Bland's lowest-index rule afterwards, which rules out cycling.
    Ratio-test ties go to the row whose basic variable has the lowest index.

    Returns ``(status, iterations)``.
    """
    m = T.shape[0] - 1
    ncol = T.shape[1] - 1
    it = 0
    while it < max_iter:
        enter = -1
        if it < dantzig_iters:
            best = -tol
            for j in range(ncol):
                if allowed[j] and T[m, j] < best:
                    best = T[m, j]
                    enter = j
        else:
            for j in range(ncol):
                if allowed[j] and T[m, j] < -tol:
                    enter = j
                    break
        if enter < 0:
            return OPTIMAL, it
        leave = -1
        best_ratio = np.inf
        for i in range(m):
            a = T[i, enter]
            if a > tol:
                ratio = T[i, ncol] / a
                if ratio < best_ratio - 1e-12:
                    best_ratio = ratio
                    leave = i
                elif ratio <= best_ratio + 1e-12 and leave >= 0 and basis[i] < basis[leave]:
                    leave = i
        if leave < 0:
            return UNBOUNDED, it
        _pivot(T, basis, leave, enter)
        it += 1
    return ITERATION_LIMIT, it


@maybe_njit
def drive_out_artificials(T, basis, first_artificial, tol):
    """Pivot zero-level artificial variables out of the basis after phase one.

    Rows in which no structural or slack column has a usable entry are
    linearly dependent on the others; they are flagged and left alone.
    """
    m = T.shape[0] - 1
    redundant = np.zeros(m, dtype=np.bool_)
    for i in range(m):
        if basis[i] < first_artificial:
            continue
        col = -1
        big = tol
        for j in range(first_artificial):
            if abs(T[i, j]) > big:
                big = abs(T[i, j])
                col = j
        if col < 0:
            redundant[i] = True
        else:
            _pivot(T, basis, i, col)
    return redundant


@maybe_njit
def _barrier_value(x, s, rx, tau, N, mu):
    v = N * np.log(rx)
    for j in range(x.shape[0]):
        v += -tau[j] * x[j] + mu * np.log(x[j])
    for i in range(s.shape[0]):
        v += mu * np.log(s[i])
    return v


@maybe_njit
def barrier_solve(x0, r, tau, N, C, cap, A, mu0, shrink, gap_tol, max_newton):
    """Path-following log-barrier method for the driver-equilibrium program.

    Maximises ``N*log(r@x) - tau@x`` over ``x > 0``, ``C@x < cap`` and
    ``A@x = 0``. ``x0`` must be strictly feasible with ``r@x0 > 0``. ``A``
    must have full row rank (it may have zero rows). Each outer iteration
    centres with equality-constrained Newton steps, then shrinks the barrier
    weight by ``shrink``; it stops once the duality-gap bound
    ``mu * (n + m)`` falls below ``gap_tol * (1 + |f|)``.

    A numerically singular Newton system ends the run early with status
    ``ITERATION_LIMIT``; the iterate is still strictly feasible.

    Returns ``(x, s, mu, status, newton_steps)`` where ``s = cap - C@x`` and
    the capacity multipliers are ``mu / s``.
    """
    n = x0.shape[0]
    m = cap.shape[0]
    k = A.shape[0]
    x = x0.copy()
    s = cap - C @ x
    mu = mu0
    steps = 0
    K = np.zeros((n + k, n + k))
    rhs = np.zeros(n + k)
    status = ITERATION_LIMIT
    stalled = False
    while steps < max_newton and not stalled:
        # centring
        for _ in range(60):
            rx = 0.0
            for j in range(n):
                rx += r[j] * x[j]
            inv_s = 1.0 / s
            g = N * r / rx - tau + mu / x - C.T @ (mu * inv_s)
            H = -(N / (rx * rx)) * np.outer(r, r)
            for j in range(n):
                H[j, j] -= mu / (x[j] * x[j])
            Cs = C * inv_s.reshape(-1, 1)
            H -= mu * (Cs.T @ Cs)
            K[:n, :n] = H
            K[:n, n:] = A.T
            K[n:, :n] = A
            K[n:, n:] = 0.0
            rhs[:n] = -g
            rhs[n:] = 0.0
            try:
                sol = np.linalg.solve(K, rhs)
            except Exception:
                # slacks near zero make the system numerically singular;
                # the caller polishes from the current iterate
                stalled = True
                break
            dx = sol[:n]
            steps += 1
            decrement = g @ dx
            if decrement <= 1e-14 * (1.0 + abs(N)):
                break
            # largest step keeping x, s and r@x positive
            t = 1.0
            ds = -(C @ dx)
            for j in range(n):
                if dx[j] < 0.0:
                    t = min(t, -0.99 * x[j] / dx[j])
            for i in range(m):
                if ds[i] < 0.0:
                    t = min(t, -0.99 * s[i] / ds[i])
            rdx = r @ dx
            if rdx < 0.0:
                t = min(t, -0.99 * rx / rdx)
            f0 = _barrier_value(x, s, rx, tau, N, mu)
            accepted = False
            for _ls in range(60):
                xn = x + t * dx
                sn = s + t * ds
                rxn = rx + t * rdx
                if _barrier_value(xn, sn, rxn, tau, N, mu) >= f0 + 0.01 * t * decrement:
                    accepted = True
                    break
                t *= 0.5
            if not accepted:
                break
            x = xn
            s = sn
            if steps >= max_newton:
                break
        if stalled:
            break
        rx = r @ x
        f = N * np.log(rx) - tau @ x
        if mu * (n + m) <= gap_tol * (1.0 + abs(f)):
            status = OPTIMAL
            break
        mu *= shrink
    return x, s, mu, status, steps
