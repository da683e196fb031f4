"""Primal active-set method for small convex quadratic programs."""

from __future__ import annotations

import numpy as np

__all__ = ["active_set_qp", "proximal_cutting_plane"]


def active_set_qp(H, g, G, h, z0, working, tol=1e-9, max_iter=1000):
    """Minimise ``0.5 z'Hz + g'z`` subject to ``G z <= h``.

    ``z0`` must be feasible and ``working`` a list of constraints active at
    ``z0`` whose rows are linearly independent, chosen so that ``H`` is
    positive definite on the null space of those rows. Returns
    ``(z, multipliers, iterations)``.
    """
    z = np.array(z0, dtype=float)
    W = list(working)
    n = z.size
    lam = np.zeros(G.shape[0])
    for it in range(max_iter):
        k = len(W)
        K = np.zeros((n + k, n + k))
        K[:n, :n] = H
        if k:
            GW = G[W]
            K[:n, n:] = GW.T
            K[n:, :n] = GW
        rhs = np.concatenate([-(H @ z + g), np.zeros(k)])
        try:
            sol = np.linalg.solve(K, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
        p, mult = sol[:n], sol[n:]
        if np.max(np.abs(p), initial=0.0) <= tol * (1.0 + np.max(np.abs(z), initial=0.0)):
            if k == 0 or mult.min() >= -tol:
                lam[:] = 0.0
                lam[W] = np.maximum(mult, 0.0)
                return z, lam, it
            W.pop(int(np.argmin(mult)))
            continue
        Gp = G @ p
        slack = h - G @ z
        alpha, block = 1.0, -1
        for i in np.flatnonzero(Gp > tol * np.abs(p).max()):
            if i in W or _dependent(G, W, i):
                continue
            a = max(slack[i], 0.0) / Gp[i]
            if a < alpha:
                alpha, block = a, i
        z = z + alpha * p
        if block >= 0:
            W.append(int(block))
    raise RuntimeError("active-set QP did not converge")


def _dependent(G, W, i, rtol=1e-5):
    """True if row ``i`` of ``G`` lies numerically in the span of rows ``W``.

    Such a row cannot block a step that keeps ``W`` active in exact
    arithmetic; admitting it would make the working set rank deficient.
    The loose default absorbs cuts whose finite-difference slopes differ
    only by noise.
    """
    if not W:
        return False
    B = G[W].T
    coef = np.linalg.lstsq(B, G[i], rcond=None)[0]
    return np.linalg.norm(B @ coef - G[i]) <= rtol * (1.0 + np.linalg.norm(G[i]))


def merge_planes(intercepts, slopes, tol=1e-9):
    """Drop cutting planes that coincide with an earlier one up to ``tol``.

    For coinciding planes the lower intercept is kept, so the model (the
    pointwise minimum) is unchanged up to ``tol``.
    """
    keep_a, keep_s = [], []
    for a, s in zip(intercepts, slopes):
        for k in range(len(keep_a)):
            if np.max(np.abs(keep_s[k] - s)) <= tol * (1.0 + np.max(np.abs(s))) and \
                    abs(keep_a[k] - a) <= tol * (1.0 + abs(a)):
                keep_a[k] = min(keep_a[k], a)
                break
        else:
            keep_a.append(a)
            keep_s.append(np.asarray(s, dtype=float))
    return np.array(keep_a), np.array(keep_s)


def proximal_cutting_plane(center, mu, points, values, slopes, upper, tol=1e-9):
    """Maximise ``min_i [values_i + slopes_i@(y - points_i)] - mu/2 |y - center|^2`` on ``[0, upper]``.

    Returns ``(y, model_value_at_y)``.
    """
    center = np.asarray(center, dtype=float)
    P = np.atleast_2d(points)
    S = np.atleast_2d(slopes)
    v = np.asarray(values, dtype=float)
    hcut, S = merge_planes(v - np.einsum("ij,ij->i", S, P), S)
    L = center.size
    nc = hcut.size
    # variables z = (y, t); the epigraph variable t carries no curvature
    H = np.zeros((L + 1, L + 1))
    H[:L, :L] = mu * np.eye(L)
    g = np.concatenate([-mu * center, [-1.0]])
    G = np.zeros((nc + 2 * L, L + 1))
    G[:nc, :L] = -S
    G[:nc, L] = 1.0
    G[nc:nc + L, :L] = np.eye(L)
    G[nc + L:, :L] = -np.eye(L)
    hvec = np.concatenate([hcut, upper, np.zeros(L)])
    y0 = np.clip(center, 0.0, upper)
    cut_vals = hcut + S @ y0
    first = int(np.argmin(cut_vals))
    z0 = np.concatenate([y0, [cut_vals[first]]])
    z, _, _ = active_set_qp(H, g, G, hvec, z0, [first], tol=tol)
    y = np.clip(z[:L], 0.0, upper)
    return y, float(np.min(hcut + S @ y))
