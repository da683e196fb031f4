"""Endogenous fleets: AVs bought at an amortised cost, CVs joining while it pays.

AVs cost ``I`` per unit of active mass and per unit time, so the platform
buys exactly the mass its dispatch uses. Potential drivers have opportunity
costs spread uniformly over ``[0, (1-R)p - c]``; a mass ``N`` of them joins
when the marginal driver's cost equals the per-driver earning ``u(N)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from scipy.optimize import brentq

from .bilevel.algorithms import run_bundle, run_genetic, run_gradient, run_grid, default_mu
from .bilevel.core import (
    BilevelSolution,
    BundleConfig,
    GdConfig,
    GeneticConfig,
    ProfitOracle,
    av_dispatch_lp,
)
from .cv_eq import CvEquilibrium, check_revealed_demand, solve_cv_equilibrium
from .model import DerivedNetwork

__all__ = [
    "EndogenousConfig",
    "ALGORITHMS",
    "max_driver_earning",
    "evaluate_profit_endogenous_av",
    "equilibrium_cv_count",
    "evaluate_profit_endogenous",
    "av_first_endogenous",
    "solve_endogenous",
]

SECANT_STEPS = 4  # before handing the bracket to Brent's method

ALGORITHMS = ("av-first", "gd", "bundle", "genetic", "exhaustive")


@dataclass
class EndogenousConfig:
    I: float  # AV cost per unit active mass per unit time
    N_max: float  # mass of potential drivers
    tol: float = 1e-7  # bracket width on N
    max_iter: int = 60

    def __post_init__(self):
        if not (np.isfinite(self.I) and self.I >= 0):
            raise ValueError("I must be finite and nonnegative")
        if not (np.isfinite(self.N_max) and self.N_max >= 0):
            raise ValueError("N_max must be finite and nonnegative")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")


def max_driver_earning(net: DerivedNetwork) -> float:
    """``(1-R)p - c``, a driver's earning rate with no waiting or repositioning."""
    s = net.spec
    return (1.0 - s.commission) * s.price - s.cost


def evaluate_profit_endogenous_av(net: DerivedNetwork, b_C, I: float, N: float, seed=None):
    """Profit with purchased AVs on ``b - b_C`` and ``N`` CVs on ``b_C``.

    AV flows are unrestricted in mass but each unit of active mass costs
    ``I``. Returns ``(total_profit, BilevelSolution)``; ``fleet_av`` is the
    purchased mass.
    """
    if I < 0:
        raise ValueError("I must be nonnegative")
    b_C = check_revealed_demand(net, b_C)
    x_A, av_profit = av_dispatch_lp(net, net.b - b_C, np.inf, purchase_cost=I)
    cv = solve_cv_equilibrium(net, b_C, N, seed=seed)
    av_mass = float(np.sum(net.tau_dr * x_A))
    sol = BilevelSolution(
        b_C=b_C, x_A=x_A, cv=cv, av_profit=av_profit, total_profit=av_profit + cv.platform_profit,
        av_active_mass=av_mass, fleet_av=av_mass, fleet_cv=float(N), extra={"I": float(I)},
    )
    return sol.total_profit, sol


def _line_root(n1, d1, n2, d2, k):
    """Positive root of ``alpha + beta N = k N^2`` for the line through ``(n1, d1)``, ``(n2, d2)``."""
    if n1 == n2:
        return None
    beta = (d2 - d1) / (n2 - n1)
    alpha = d1 - beta * n1
    disc = beta * beta + 4.0 * k * alpha
    if disc < 0:
        return None
    return (beta + np.sqrt(disc)) / (2.0 * k)


def equilibrium_cv_count(net: DerivedNetwork, b_C, N_max: float, tol: float = 1e-7, max_iter: int = 60,
                         probes: list | None = None):
    """Participating driver mass ``N`` and the equilibrium it induces.

    Solves ``u(N) = r_max * N / N_max`` with ``u(N)`` the per-driver earning,
    which does not increase with ``N``. ``u(0)`` is read at ``1e-6 * N_max``.
    Total driver profit ``D(N) = N u(N)`` is piecewise linear in ``N``, so
    the root is first sought by secant steps on ``D`` through the two latest
    probes (exact once both lie on the root's piece). If that does not hit
    a round-off level residual within ``SECANT_STEPS`` steps (a root on a
    kink), Brent's method finishes the bracket to width ``tol``. ``probes``,
    if given, collects every ``(N, u(N))`` evaluated.
    """
    b_C = check_revealed_demand(net, b_C)
    if N_max < 0:
        raise ValueError("N_max must be nonnegative")
    r_max = max_driver_earning(net)
    L = net.L
    if N_max == 0 or r_max <= 0:
        return 0.0, CvEquilibrium.zero(L, b_C, 0.0)
    k = r_max / N_max
    cache = {}

    def solve(N):
        if N not in cache:
            eq = solve_cv_equilibrium(net, b_C, N)
            cache[N] = eq
            if probes is not None:
                probes.append((N, eq.driver_profit / N))
        return cache[N]

    def g(N):
        return solve(N).driver_profit / N - k * N

    ftol = 1e-10 * r_max
    if g(N_max) >= -ftol:
        return float(N_max), solve(N_max)
    lo, hi = 1e-6 * N_max, float(N_max)
    if g(lo) <= 0:
        # no profitable cycle, or almost nobody joins
        return 0.0, CvEquilibrium.zero(L, b_C, 0.0)
    recent = [hi, lo]
    for _ in range(min(SECANT_STEPS, max_iter)):
        n1, n2 = recent[-2], recent[-1]
        N = _line_root(n1, solve(n1).driver_profit, n2, solve(n2).driver_profit, k)
        if N is None or not lo < N < hi:
            break
        N = float(N)
        v = g(N)
        recent.append(N)
        if abs(v) <= ftol:
            return N, solve(N)
        if v > 0:
            lo = N
        else:
            hi = N
    if hi - lo > tol:
        root = brentq(g, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=max_iter, disp=False)
        return float(root), solve(float(root))
    N = 0.5 * (lo + hi)
    return N, solve(N)


def evaluate_profit_endogenous(net: DerivedNetwork, b_C, cfg: EndogenousConfig):
    """Fitness of ``b_C``: CV participation at its fixed point, then purchased AVs."""
    N, _ = equilibrium_cv_count(net, b_C, cfg.N_max, cfg.tol, cfg.max_iter)
    total, sol = evaluate_profit_endogenous_av(net, b_C, cfg.I, N)
    sol.extra["N_max"] = float(cfg.N_max)
    return total, sol


def endogenous_oracle(net: DerivedNetwork, cfg: EndogenousConfig) -> ProfitOracle:
    return ProfitOracle(net.b, lambda y: evaluate_profit_endogenous(net, y, cfg))


def av_first_endogenous(net: DerivedNetwork, cfg: EndogenousConfig) -> BilevelSolution:
    """Buy and dispatch the most profitable AV fleet, then reveal the rest to CVs."""
    started = time.perf_counter()
    x_A, _ = av_dispatch_lp(net, net.b, np.inf, purchase_cost=cfg.I)
    b_C = np.clip(net.b - x_A.sum(axis=0), 0.0, net.b)
    b_C[np.abs(b_C) < 1e-12 * (1.0 + net.b)] = 0.0
    _, sol = evaluate_profit_endogenous(net, b_C, cfg)
    return sol.tagged("av-first", 0, 1, started)


def solve_endogenous(net: DerivedNetwork, cfg: EndogenousConfig, algorithm: str = "gd", algo_cfg=None,
                     starts=None, steps_per_region: int = 40) -> BilevelSolution:
    """Outer search over ``b_C`` with endogenous AV and CV supply.

    ``algorithm`` is one of ``ALGORITHMS``. For ``gd`` and ``bundle``,
    ``starts`` lists initial points (default: ``b``) and the best run wins;
    ``algo_cfg`` is the matching ``GdConfig``, ``BundleConfig`` or
    ``GeneticConfig``.
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}")
    if algorithm == "av-first":
        return av_first_endogenous(net, cfg)
    started = time.perf_counter()
    oracle = endogenous_oracle(net, cfg)
    extra = {}
    iters = 0
    converged = True
    if algorithm == "genetic":
        gcfg = algo_cfg or GeneticConfig()
        y, _, iters = run_genetic(oracle, gcfg)
        extra["seed"] = gcfg.seed
    elif algorithm == "exhaustive":
        y, _ = run_grid(oracle, steps_per_region)
        iters = 1
        extra["steps"] = steps_per_region
    else:
        pts = [net.b] if starts is None else [check_revealed_demand(net, s) for s in starts]
        best = None
        for y0 in pts:
            if algorithm == "gd":
                y, v, it = run_gradient(oracle, y0, algo_cfg or GdConfig())
                conv = True
            else:
                bcfg = algo_cfg or BundleConfig()
                # the CV fleet is endogenous; scale mu by the largest possible one
                mu = bcfg.mu if bcfg.mu is not None else default_mu(net, max(cfg.N_max, 1e-12))
                y, v, it, conv = run_bundle(oracle, y0, bcfg, mu)
                extra["mu"] = mu
            iters += it
            if best is None or v > best[1]:
                best = (y, v, conv)
        y, _, converged = best
        extra["starts"] = len(pts)
    sol = oracle.solution(y)[1]
    return sol.tagged(algorithm, iters, oracle.count, started, converged=converged, **extra)
