"""Outer searches over the revealed demand: gradient ascent, bundle, genetic, grid."""

from __future__ import annotations

import itertools
import time

import numpy as np

from ..cv_eq import check_revealed_demand
from ..model import DerivedNetwork
from .core import (
    BilevelSolution,
    BundleConfig,
    GdConfig,
    GeneticConfig,
    ProfitOracle,
    av_first,
    bilevel_oracle,
    fd_gradient,
)
from .qp import proximal_cutting_plane

__all__ = [
    "gradient_descent",
    "bundle_method",
    "genetic",
    "selection_probabilities",
    "exhaustive_search",
    "multistart",
    "default_starts",
    "run_gradient",
    "run_bundle",
    "run_genetic",
    "run_grid",
]

MAX_GRID_EVALUATIONS = 10**6


def _scale(oracle: ProfitOracle) -> float:
    top = float(oracle.upper.max(initial=0.0))
    return top if top > 0 else 1.0


# --- gradient ascent -------------------------------------------------------

def run_gradient(oracle: ProfitOracle, y0, cfg: GdConfig):
    """Normalised gradient steps with a fixed step length.

    When a step gains no more than ``tol`` the plain method stops. With
    ``cfg.shrink`` set, the search instead restarts from the best point with
    the step scaled by ``shrink``, until the step drops below ``min_step``.
    Returns ``(best_y, best_value, iterations)``; the best point visited is
    reported, not the last one.
    """
    step = cfg.step if cfg.step is not None else 0.05 * _scale(oracle)
    h = cfg.fd_step if cfg.fd_step is not None else 1e-4 * _scale(oracle)
    min_step = cfg.min_step if cfg.min_step is not None else h
    y = oracle.clip(y0)
    r_old = oracle(y)
    best_y, best = y.copy(), r_old
    it = 0
    while it < cfg.max_iter:
        d = fd_gradient(oracle, y, h, r_old)
        norm = np.abs(d).sum()
        stalled = norm == 0
        if not stalled:
            y_new = oracle.clip(y + step * d / norm)
            r_new = oracle(y_new)
            it += 1
            if r_new > best:
                best_y, best = y_new.copy(), r_new
            eps = cfg.tol if cfg.tol is not None else 1e-6 * (1.0 + abs(r_old))
            stalled = r_new - r_old <= eps
        if not stalled:
            y, r_old = y_new, r_new
            continue
        if cfg.shrink is None or step * cfg.shrink < min_step:
            break
        step *= cfg.shrink
        y, r_old = best_y.copy(), best
    return best_y, best, it


def gradient_descent(net: DerivedNetwork, M: float, N: float, cfg: GdConfig | None = None,
                     b_C0=None) -> BilevelSolution:
    """Gradient ascent on the revealed demand, starting from ``b_C0`` (default: all revealed)."""
    started = time.perf_counter()
    cfg = cfg or GdConfig()
    oracle = bilevel_oracle(net, M, N)
    y0 = net.b if b_C0 is None else check_revealed_demand(net, b_C0)
    y, _, it = run_gradient(oracle, y0, cfg)
    return oracle.solution(y)[1].tagged("gd", it, oracle.count, started, start=np.asarray(y0).tolist())


# --- bundle method ---------------------------------------------------------

def _recentred_cuts(xc, rc, pts, vals, slopes, gamma):
    """Express every cut through the centre with a nonnegative linearisation error.

    For a concave profit each cut lies above the function, so its value at
    the centre is at least ``rc``. The profit here is not concave, so cuts
    taken at distant points can undercut the centre; they are shifted up to
    ``rc + max(|e|, gamma * |xc - y|^2)``, the usual downshifting rule.
    """
    P = np.array(pts)
    S = np.array(slopes)
    e = np.array(vals) + np.einsum("ij,ij->i", S, xc - P) - rc
    e = np.maximum(np.abs(e), gamma * np.sum((xc - P) ** 2, axis=1))
    return np.tile(xc, (len(e), 1)), rc + e, S


def run_bundle(oracle: ProfitOracle, y0, cfg: BundleConfig, mu: float):
    """Proximal bundle iterations for maximisation.

    Returns ``(center, value, iterations, converged)``.
    """
    h = cfg.fd_step if cfg.fd_step is not None else 1e-4 * _scale(oracle)
    xc = oracle.clip(y0)
    rc = oracle(xc)
    pts, vals, slopes = [xc.copy()], [rc], [fd_gradient(oracle, xc, h, rc)]
    for k in range(cfg.max_iter):
        P, V, S = _recentred_cuts(xc, rc, pts, vals, slopes, cfg.gamma)
        y, model = proximal_cutting_plane(xc, mu, P, V, S, oracle.upper)
        delta = model - 0.5 * mu * float(np.sum((y - xc) ** 2)) - rc
        if delta < cfg.tol:
            return xc, rc, k, True
        # a repeated trial point adds no information; the model is stuck
        if any(np.max(np.abs(y - p)) <= 1e-12 * _scale(oracle) for p in pts):
            return xc, rc, k, False
        ry = oracle(y)
        sy = fd_gradient(oracle, y, h, ry)
        if ry - rc >= cfg.margin:
            xc, rc = y, ry
        pts.append(y)
        vals.append(ry)
        slopes.append(sy)
    return xc, rc, cfg.max_iter, False


MU_FACTOR = 4.0


def default_mu(net: DerivedNetwork, N: float) -> float:
    """``MU_FACTOR * N * p / sum(b)``: proximal weight in profit per squared demand unit."""
    total = float(net.b.sum())
    v = N * net.spec.price / total if total > 0 else 1.0
    return MU_FACTOR * v if v > 0 else MU_FACTOR


def bundle_method(net: DerivedNetwork, M: float, N: float, cfg: BundleConfig | None = None,
                  b_C0=None) -> BilevelSolution:
    """Proximal bundle method on the revealed demand (final center is returned)."""
    started = time.perf_counter()
    cfg = cfg or BundleConfig()
    mu = cfg.mu if cfg.mu is not None else default_mu(net, N)
    oracle = bilevel_oracle(net, M, N)
    y0 = net.b if b_C0 is None else check_revealed_demand(net, b_C0)
    y, _, it, conv = run_bundle(oracle, y0, cfg, mu)
    return oracle.solution(y)[1].tagged("bundle", it, oracle.count, started, converged=conv, mu=mu,
                                        start=np.asarray(y0).tolist())


# --- genetic search --------------------------------------------------------

def selection_probabilities(K: int, q: float) -> np.ndarray:
    """Normalised geometric ranking: rank ``r`` (1 = fittest) gets ``q(1-q)^(r-1) / (1-(1-q)^K)``."""
    r = np.arange(1, K + 1)
    return q * (1.0 - q) ** (r - 1) / (1.0 - (1.0 - q) ** K)


def run_genetic(oracle: ProfitOracle, cfg: GeneticConfig):
    """Returns ``(best_y, best_value, generations)``.

    All random draws for an offspring happen before its fitness is
    evaluated, so the stream depends only on the seed and on fitness
    comparisons.
    """
    rng = np.random.default_rng(cfg.seed)
    K, L = cfg.population, oracle.upper.size
    probs = selection_probabilities(K, cfg.q)
    pop = rng.uniform(0.0, 1.0, (K, L)) * oracle.upper
    fit = np.array([oracle(p) for p in pop])
    best_i = int(np.argmax(fit))
    best_y, best = pop[best_i].copy(), fit[best_i]
    history = [best]
    gen = 1
    while gen < cfg.max_generations:
        order = np.argsort(-fit, kind="stable")
        children = np.empty_like(pop)
        child_fit = np.empty(K)
        for k in range(K):
            a = int(rng.choice(K, p=probs))
            rest = np.delete(np.arange(K), a)
            pb = probs[rest] / probs[rest].sum()
            b = int(rng.choice(rest, p=pb))
            pa, pb_ = pop[order[a]], pop[order[b]]
            target = max(fit[order[a]], fit[order[b]])
            kept, kept_fit = None, -np.inf
            for _ in range(cfg.retry_cap):
                child = pa.copy()
                swap = rng.random(L) < cfg.p_crossover
                child[swap] = pb_[swap]
                if rng.random() < cfg.p_mutation:
                    j = int(rng.integers(L))
                    child[j] = rng.uniform(0.0, oracle.upper[j])
                fc = oracle(child)
                if fc > kept_fit:
                    kept, kept_fit = child, fc
                if fc >= target:
                    break
            children[k], child_fit[k] = kept, kept_fit
        pop, fit = children, child_fit
        i = int(np.argmax(fit))
        if fit[i] > best:
            best_y, best = pop[i].copy(), fit[i]
        history.append(best)
        gen += 1
        w = cfg.stall_window
        if len(history) > w and history[-1] <= history[-1 - w] + 1e-12 * (1.0 + abs(best)):
            break
    return best_y, best, gen


def genetic(net: DerivedNetwork, M: float, N: float, cfg: GeneticConfig | None = None) -> BilevelSolution:
    """Genetic search over the box ``[0, b]``; deterministic for a fixed seed."""
    started = time.perf_counter()
    cfg = cfg or GeneticConfig()
    oracle = bilevel_oracle(net, M, N)
    y, _, gens = run_genetic(oracle, cfg)
    return oracle.solution(y)[1].tagged("genetic", gens, oracle.count, started, seed=cfg.seed)


# --- grid search -----------------------------------------------------------

def run_grid(oracle: ProfitOracle, steps: int, refine: bool = True):
    """Best grid point with ``steps`` intervals per region, then one refinement
    pass at a tenth of the spacing within one coarse step of the winner."""
    if steps < 1:
        raise ValueError("steps_per_region must be at least 1")
    upper = oracle.upper
    L = upper.size
    free = upper > 0
    n_free = int(free.sum())
    if (steps + 1) ** n_free > MAX_GRID_EVALUATIONS or (refine and 21 ** n_free > MAX_GRID_EVALUATIONS):
        raise ValueError(f"grid search over {n_free} regions with {steps} steps exceeds "
                         f"{MAX_GRID_EVALUATIONS} evaluations")
    axes = [np.linspace(0.0, upper[i], steps + 1) if free[i] else np.zeros(1) for i in range(L)]
    best_y, best = None, -np.inf
    for pt in itertools.product(*axes):
        y = np.array(pt)
        v = oracle(y)
        if v > best:
            best_y, best = y, v
    if refine:
        fine = []
        for i in range(L):
            if not free[i]:
                fine.append(np.zeros(1))
                continue
            d = upper[i] / steps
            pts = best_y[i] + d * np.arange(-10, 11) / 10.0
            fine.append(np.unique(np.clip(pts, 0.0, upper[i])))
        for pt in itertools.product(*fine):
            y = np.array(pt)
            v = oracle(y)
            if v > best:
                best_y, best = y, v
    return best_y, best


def exhaustive_search(net: DerivedNetwork, M: float, N: float, steps_per_region: int = 40,
                      refine: bool = True) -> BilevelSolution:
    """Grid search over the revealed demand; ground truth for small networks."""
    started = time.perf_counter()
    oracle = bilevel_oracle(net, M, N)
    y, _ = run_grid(oracle, steps_per_region, refine)
    return oracle.solution(y)[1].tagged("exhaustive", 1, oracle.count, started, steps=steps_per_region)


# --- multistart ------------------------------------------------------------

def default_starts(net: DerivedNetwork, M: float) -> list:
    """AV-first residual, then 0, b/4, b/2, 3b/4 and b."""
    first = av_first(net, M, 0.0).b_C
    return [first] + [f * net.b for f in (0.0, 0.25, 0.5, 0.75, 1.0)]


def multistart(net: DerivedNetwork, M: float, N: float, algorithm: str = "gd", cfg=None,
               starts=None) -> BilevelSolution:
    """Run a local method from several starts and keep the most profitable result."""
    started = time.perf_counter()
    if algorithm not in ("gd", "bundle"):
        raise ValueError("multistart supports 'gd' and 'bundle'")
    starts = default_starts(net, M) if starts is None else [check_revealed_demand(net, s) for s in starts]
    runner = gradient_descent if algorithm == "gd" else bundle_method
    best = None
    iters = evals = 0
    for s in starts:
        sol = runner(net, M, N, cfg, s)
        iters += sol.iterations
        evals += sol.evaluations
        if best is None or sol.total_profit > best.total_profit:
            best = sol
    return best.tagged(f"multistart-{algorithm}", iters, evals, started, starts=len(starts))
