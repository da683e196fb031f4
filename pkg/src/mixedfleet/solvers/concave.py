"""Concave log-objective solver for the driver equilibrium program.

The program is

    maximize   N*log(r@x) - tau@x
    subject to sum_j x[j, a] <= capacity[a]        (multipliers w[a])
               sum_j (sum_k x[k, j]) q[j, i] == sum_a x[i, a]
               x >= 0

over action rates ``x[i, a]`` (reposition from ``i`` to ``a``, then serve a
customer picked up in ``a``). The balance rows describe a Markov decision
process on regions: action ``(i, a)`` sends a vehicle to ``j`` with
probability ``q[a, j]``. Any feasible ``x`` is supported on end components of
that process, so actions leaving every end component are removed first. The
remaining problem has a strictly feasible interior and is handed to a
log-barrier path-following method.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import qr
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from ..settings import SETTINGS
from . import _kernels
from .lp import LinearProgram, SolveResult, solve_lp

__all__ = ["solve_concave_log", "balance_matrix", "capacity_matrix", "end_component_actions"]


def capacity_matrix(L: int) -> np.ndarray:
    """Row ``a`` sums the rates of all actions that pick up in region ``a``."""
    C = np.zeros((L, L * L))
    for a in range(L):
        C[a, a::L] = 1.0
    return C


def balance_matrix(q: np.ndarray) -> np.ndarray:
    """Row ``i``: expected arrivals into ``i`` minus departures from ``i``."""
    L = q.shape[0]
    A = np.zeros((L, L * L))
    for k in range(L):
        for a in range(L):
            A[:, k * L + a] += q[a, :]
    for i in range(L):
        A[i, i * L:(i + 1) * L] -= 1.0
    return A


_COMPONENT_CACHE: dict = {}
_COMPONENT_CACHE_SIZE = 256


def end_component_actions(q: np.ndarray, allowed: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Keep only actions that can carry positive flow in a balanced circulation.

    ``allowed`` is a flat boolean mask over the ``L*L`` actions. Returns the
    reduced mask and the strongly connected component label of each region.
    Results depend only on the sparsity pattern and are memoised.
    """
    key = (q.shape[0], (q > 0).tobytes(), allowed.tobytes())
    hit = _COMPONENT_CACHE.get(key)
    if hit is None:
        if len(_COMPONENT_CACHE) >= _COMPONENT_CACHE_SIZE:
            _COMPONENT_CACHE.clear()
        hit = _end_components(q, allowed)
        _COMPONENT_CACHE[key] = hit
    return hit[0].copy(), hit[1].copy()


def _end_components(q, allowed):
    L = q.shape[0]
    keep = allowed.copy()
    support = q > 0
    while True:
        adj = np.zeros((L, L), dtype=bool)
        for idx in np.flatnonzero(keep):
            i, a = divmod(idx, L)
            adj[i] |= support[a]
        _, labels = connected_components(csr_matrix(adj), directed=True, connection="strong")
        changed = False
        for idx in np.flatnonzero(keep):
            i, a = divmod(idx, L)
            succ = np.flatnonzero(support[a])
            if succ.size == 0 or np.any(labels[succ] != labels[i]):
                keep[idx] = False
                changed = True
        if not changed:
            return keep, labels


def _interior_point(q, keep, labels, C, cap, rng):
    """Strictly positive balanced flow on every kept action, inside capacity."""
    L = q.shape[0]
    x = np.zeros(L * L)
    for comp in np.unique(labels):
        states = np.flatnonzero(labels == comp)
        acts = [idx for idx in np.flatnonzero(keep) if labels[idx // L] == comp]
        if not acts:
            continue
        weight = np.zeros(L * L)
        weight[acts] = rng.uniform(0.5, 1.5, len(acts)) if rng is not None else 1.0
        policy = weight.reshape(L, L)
        policy = policy / np.where(policy.sum(1, keepdims=True) > 0, policy.sum(1, keepdims=True), 1.0)
        P = policy @ q  # region-to-region transition matrix under the mixed policy
        sub = P[np.ix_(states, states)]
        # stationary distribution of the irreducible chain on this component
        k = states.size
        M = np.vstack([sub.T - np.eye(k), np.ones((1, k))])
        rhs = np.zeros(k + 1)
        rhs[-1] = 1.0
        nu = np.linalg.lstsq(M, rhs, rcond=None)[0]
        nu = np.maximum(nu, 1e-12)
        flow = np.zeros(L)
        flow[states] = nu
        x += (flow[:, None] * policy).ravel()
    load = C @ x
    rows = load > 0
    if not np.any(rows):
        return x
    return x * (0.5 * np.min(cap[rows] / load[rows]))


def _independent_rows(A, tol=1e-10):
    if A.shape[0] == 0:
        return A
    _, R, piv = qr(A.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, diag.max(initial=0.0))))
    return A[np.sort(piv[:rank])]


def solve_concave_log(
    reward,
    tau,
    N: float,
    capacity,
    q,
    usable=None,
    seed: int | None = None,
    max_newton: int = 2000,
) -> SolveResult:
    """Maximise ``N*log(r@x) - tau@x`` under capacity and flow balance.

    ``reward`` and ``tau`` are ``L x L`` action matrices, ``capacity`` has
    length ``L`` and ``q`` is the routing matrix. ``usable`` optionally masks
    actions out. ``seed`` randomises the interior starting point; the optimum
    does not depend on it up to solver tolerance.

    ``duals`` holds the capacity multipliers (waiting times). When no feasible
    circulation earns a positive reward the zero solution is returned.
    """
    r = np.asarray(reward, dtype=float).ravel()
    t = np.asarray(tau, dtype=float).ravel()
    q = np.asarray(q, dtype=float)
    cap = np.asarray(capacity, dtype=float).ravel()
    L = cap.size
    if q.shape != (L, L) or r.size != L * L or t.size != L * L:
        raise ValueError("reward, tau and q must be L x L with L = len(capacity)")
    if N < 0:
        raise ValueError("N must be nonnegative")
    allowed = np.ones(L * L, dtype=bool) if usable is None else np.asarray(usable, dtype=bool).ravel().copy()
    allowed &= np.tile(cap > 0, L)
    keep, labels = end_component_actions(q, allowed)

    C_full = capacity_matrix(L)
    A_full = balance_matrix(q)
    zero = SolveResult(
        x=np.zeros(L * L), duals=np.zeros(L), objective=0.0, status="optimal", iterations=0,
        residuals={"primal": 0.0, "dual": 0.0, "complementarity": 0.0, "gap": 0.0},
    )
    if not np.any(keep):
        zero.status = "infeasible" if N > 0 else "optimal"
        return zero
    if N == 0:
        return zero

    cols = np.flatnonzero(keep)
    rows = np.flatnonzero(C_full[:, cols].any(axis=1))
    C = C_full[np.ix_(rows, cols)]
    cp = cap[rows]
    A = _independent_rows(A_full[:, cols])
    rc = r[cols]
    # solve in units where flows, costs and multipliers are all O(1):
    # x = sigma * x' and the objective is divided by N, which leaves
    # log(r@x') - (sigma/N) tau@x'. sigma is the largest capacity, or the
    # flow N / max(tau) that the fleet can sustain if that is smaller.
    # Waiting times come back as N * w' / sigma.
    tmax = float(t[cols].max())
    sigma = float(cp.max())
    if tmax > 0:
        sigma = min(sigma, N / tmax)
    cps, tc = cp / sigma, t[cols] * (sigma / N)
    Ns = 1.0

    # largest attainable reward rate; the log objective needs it positive
    lp = solve_lp(LinearProgram(c=rc, A_ub=C, b_ub=cps, A_eq=A, b_eq=np.zeros(A.shape[0])))
    if not lp.ok:
        return SolveResult(x=np.zeros(L * L), duals=np.zeros(L), objective=float("nan"),
                           status="numerical", iterations=lp.iterations)
    scale_r = max(1.0, np.abs(rc).max())
    if lp.objective <= 1e-12 * scale_r * max(1.0, cps.sum()):
        return zero

    rng = np.random.default_rng(seed) if seed is not None else None
    x_int = _interior_point(q, keep, labels, C_full, cap / sigma, rng)[cols]
    rx_lp, rx_int = lp.objective, rc @ x_int
    eps = 0.5 if rng is None else rng.uniform(0.2, 0.8)
    if rx_int < 0:
        eps = min(eps, 0.5 * rx_lp / (rx_lp - rx_int))
    x0 = (1.0 - eps) * lp.x + eps * x_int

    x, s, mu, status, steps = _kernels.barrier_solve(
        x0, rc, tc, Ns, C, cps, A,
        SETTINGS.barrier_mu0, SETTINGS.barrier_shrink, SETTINGS.barrier_gap, max_newton,
    )
    duals = None
    for sup, tight in _active_set_guesses(x, s, mu):
        x_p, polished = _polish(x, sup, tight, rc, tc, Ns, C, cps, A, mu / s)
        if polished:
            duals = _exact_duals(x_p, rc, tc, Ns, C, cps, A)
            if duals is not None:
                x = x_p
                break
    if duals is None:
        # a barrier stopped before degenerate rows separate can leave every
        # guess wrong; the linearised program's vertex names the right face
        for sup, tight in _vertex_guesses(x, rc, tc, Ns, C, cps, A):
            x_p, polished = _polish(x, sup, tight, rc, tc, Ns, C, cps, A, mu / s)
            if polished:
                duals = _exact_duals(x_p, rc, tc, Ns, C, cps, A)
                if duals is not None:
                    x = x_p
                    break
    if duals is None:
        duals = _exact_duals(x, rc, tc, Ns, C, cps, A)
    if duals is not None:
        w_rows, z = duals
    else:
        w_rows = mu / s
        z = mu / np.maximum(x, np.finfo(float).tiny)  # multipliers of x >= 0
    # residuals are those of the scaled problem
    res, _ = _kkt_residuals(x, w_rows, z, rc, tc, Ns, C, cps, A)
    x_full = np.zeros(L * L)
    x_full[cols] = sigma * x
    w = np.zeros(L)
    w[rows] = N * w_rows / sigma
    obj = float(N * np.log(r @ x_full) - t @ x_full)
    ok = (duals is not None or status == _kernels.OPTIMAL) and \
        max(res.values()) <= SETTINGS.solver_tol * (1.0 + Ns)
    return SolveResult(
        x=x_full, duals=w, objective=obj, status="optimal" if ok else "numerical",
        iterations=int(steps), residuals=res,
    )


def _exact_duals(x, r, tau, N, C, cap, A):
    """Capacity and sign multipliers certifying ``x``, or ``None``.

    With ``theta = N / (r@x)`` the optimum also solves the linear program
    ``max (theta*r - tau)@x`` over the same polytope, so that program's duals
    are valid multipliers for the concave problem whenever ``x`` attains its
    optimal value.
    """
    theta = N / (r @ x)
    c = theta * r - tau
    lp = solve_lp(LinearProgram(c=c, A_ub=C, b_ub=cap, A_eq=A, b_eq=np.zeros(A.shape[0])))
    if not lp.ok:
        return None
    if c @ x < lp.objective - 1e-10 * (1.0 + abs(lp.objective)):
        return None
    z = -(c - C.T @ lp.duals - (A.T @ lp.eq_duals if A.shape[0] else 0.0))
    return lp.duals, np.maximum(z, 0.0)


def _vertex_guesses(x, r, tau, N, C, cap, A, tol=1e-9):
    """Support and tight rows of the optimal vertex of the program linearised at ``x``.

    The support is read exactly and then above ``tol``; rows are held tight
    where the vertex prices them and, failing that, wherever they have no
    slack. Near-degenerate rows and tiny flows can go either way.
    """
    theta = N / (r @ x)
    lp = solve_lp(LinearProgram(c=theta * r - tau, A_ub=C, b_ub=cap, A_eq=A, b_eq=np.zeros(A.shape[0])))
    if not lp.ok or not np.any(lp.x > tol):
        return []
    priced = lp.duals > tol
    no_slack = cap - C @ lp.x <= tol * (1.0 + cap)
    out = []
    for sup in (lp.x > 0, lp.x > tol):
        for tight in (priced, no_slack):
            if not any(np.array_equal(sup, a) and np.array_equal(tight, b) for a, b in out):
                out.append((sup, tight))
    return out


def _kkt_residuals(x, w, z, r, tau, N, C, cap, A):
    """Residuals of the optimality system given multipliers ``w`` and ``z``."""
    rx = r @ x
    grad = N * r / rx - tau - C.T @ w
    k = A.shape[0]
    lam = np.linalg.lstsq(A.T, -(grad + z), rcond=None)[0] if k else np.zeros(0)
    stat = grad + z + (A.T @ lam if k else 0.0)
    s = cap - C @ x
    res = {
        "primal": float(max(np.max(-s, initial=0.0), np.max(np.abs(A @ x), initial=0.0),
                            np.max(-x, initial=0.0))),
        "dual": float(max(np.max(np.abs(stat), initial=0.0), np.max(-z, initial=0.0),
                          np.max(-w, initial=0.0))),
        "complementarity": float(max(np.max(np.abs(w * s), initial=0.0), np.max(np.abs(z * x), initial=0.0))),
        "gap": 0.0,
    }
    return res, float(N * np.log(rx) - tau @ x)


def _split_candidates(v, limit, band=6.0):
    """Boolean masks ``v > cut``: first ``cut = 0``, then cuts at the widest
    gaps, then the first mask with its entries nearest zero flipped, both
    cumulatively and one at a time."""
    out = [v > 0]
    vals = np.sort(v[np.isfinite(v)])
    gaps = np.diff(vals)
    for i in np.argsort(-gaps, kind="stable")[:limit]:
        if not gaps[i] > 1.0:
            break
        mask = v > 0.5 * (vals[i] + vals[i + 1])
        if not any(np.array_equal(mask, m) for m in out):
            out.append(mask)
    # entries within a few units of the threshold may sit on either side
    near = np.flatnonzero(np.abs(v) < band)
    near = near[np.argsort(np.abs(v[near]), kind="stable")]
    flips = [near[:j] for j in range(1, min(limit, near.size) + 1)]
    # single flips too: two rows reaching their bound at the same point
    # need exactly one of them held tight
    flips += [near[j:j + 1] for j in range(1, min(limit, near.size))]
    if near.size > limit:
        flips.append(near)
    for idx in flips:
        mask = out[0].copy()
        mask[idx] = ~mask[idx]
        if not any(np.array_equal(mask, m) for m in out):
            out.append(mask)
    return out


def _active_set_guesses(x, s, mu, limit=3):
    """Candidate (support, tight rows) pairs read off a barrier iterate.

    The first guess marks a variable as in the support when it exceeds its
    barrier multiplier ``mu/x`` and a row as tight when its slack is below
    ``mu/s``. That rule misjudges entries whose true size is near
    ``sqrt(mu)``, so further guesses cut the sorted log-ratios at their widest
    gaps, separately for variables and rows.
    """
    with np.errstate(divide="ignore"):
        vx = np.log(x * x / mu)
        vs = -np.log(s * s / mu)
    xs = _split_candidates(vx, limit)
    ss = _split_candidates(vs, limit)
    pairs = sorted(itertools.product(range(len(xs)), range(len(ss))), key=lambda ij: (ij[0] + ij[1], ij))
    for i, j in pairs:
        yield xs[i], ss[j]


def _polish(x, sup, tight, r, tau, N, C, cap, A, w0, max_iter=30):
    """Solve the optimality equations exactly on a guessed active set.

    ``sup`` marks the variables allowed to be positive and ``tight`` the
    capacity rows held at equality. With ``theta = N / (r@x)`` carried as an
    unknown the stationarity rows are linear, which keeps the Newton system
    well conditioned even when waiting times are large. Least squares handles
    supports that carry a non-unique optimum. The answer is kept only if it
    is feasible; multipliers are recomputed afterwards by ``_exact_duals``.
    """
    if not np.any(sup):
        return x, False
    n, m, k = int(sup.sum()), int(tight.sum()), A.shape[0]
    rS, tS = r[sup], tau[sup]
    CT = C[np.ix_(tight, sup)]
    AS = A[:, sup]
    xs = x[sup].copy()
    theta = N / (rS @ xs)
    wt = w0[tight]
    lam = np.zeros(k)
    scale = 1.0 + N + np.abs(tau).max()
    size = n + 1 + m + k
    for _ in range(max_iter):
        rx = rS @ xs
        if rx <= 0 or theta <= 0:
            return x, False
        F = np.concatenate([
            theta * rS - tS - CT.T @ wt + AS.T @ lam,
            CT @ xs - cap[tight],
            AS @ xs,
            [rx - N / theta],
        ])
        if np.max(np.abs(F), initial=0.0) <= 1e-14 * scale:
            break
        J = np.zeros((n + m + k + 1, size))
        J[:n, n] = rS
        J[:n, n + 1:n + 1 + m] = -CT.T
        J[:n, n + 1 + m:] = AS.T
        J[n:n + m, :n] = CT
        J[n + m:n + m + k, :n] = AS
        J[-1, :n] = rS
        J[-1, n] = N / theta ** 2
        d = np.linalg.lstsq(J, -F, rcond=None)[0]
        xs += d[:n]
        theta += d[n]
        wt += d[n + 1:n + 1 + m]
        lam += d[n + 1 + m:]
    tol = 1e-10 * scale
    if np.any(xs < -tol):
        return x, False
    xn = np.zeros_like(x)
    xn[sup] = np.maximum(xs, 0.0)
    if np.any(C @ xn - cap > tol):
        return x, False
    if np.max(np.abs(A @ xn), initial=0.0) > tol:
        return x, False
    return xn, True
