"""Platform profit as a function of the demand revealed to conventional drivers."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..cv_eq import CvEquilibrium, SolverError, check_revealed_demand, solve_cv_equilibrium
from ..model import DerivedNetwork
from ..solvers.concave import balance_matrix, capacity_matrix
from ..solvers.lp import LinearProgram, solve_lp

__all__ = [
    "BilevelSolution",
    "GdConfig",
    "BundleConfig",
    "GeneticConfig",
    "ProfitOracle",
    "av_dispatch_lp",
    "evaluate_profit",
    "av_first",
    "numerical_gradient",
]


@dataclass
class BilevelSolution:
    b_C: np.ndarray
    x_A: np.ndarray
    cv: CvEquilibrium
    av_profit: float
    total_profit: float
    av_active_mass: float
    algorithm: str = "evaluate"
    iterations: int = 0
    evaluations: int = 1
    wall_time: float = 0.0
    converged: bool = True
    fleet_av: float = float("inf")
    fleet_cv: float = 0.0
    extra: dict = field(default_factory=dict)

    def tagged(self, algorithm, iterations, evaluations, started, converged=True, **extra):
        self.algorithm = algorithm
        self.iterations = int(iterations)
        self.evaluations = int(evaluations)
        self.wall_time = time.perf_counter() - started
        self.converged = bool(converged)
        self.extra.update(extra)
        return self


def _default_step(net):
    return float(net.b.max())


@dataclass
class GdConfig:
    step: float | None = None  # defaults to 0.05 * max b_i
    tol: float | None = None  # defaults to 1e-6 * (1 + |profit|)
    max_iter: int = 100
    fd_step: float | None = None  # defaults to 1e-4 * max b_i
    shrink: float | None = 0.5  # None keeps the step fixed throughout
    min_step: float | None = None  # defaults to fd_step

    def __post_init__(self):
        if self.shrink is not None and not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        for name in ("step", "tol", "fd_step", "min_step"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class BundleConfig:
    mu: float | None = None  # defaults to 4 * N * p / sum(b)
    tol: float = 1e-6
    margin: float = 1e-7
    max_iter: int = 200
    fd_step: float | None = None
    gamma: float = 0.0  # downshift factor for cuts that undercut the centre

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if self.mu is not None and not self.mu > 0:
            raise ValueError("mu must be positive")
        if not self.tol > 0 or not self.margin > 0:
            raise ValueError("tol and margin must be positive")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ValueError("fd_step must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass
class GeneticConfig:
    population: int = 10
    q: float = 0.1
    p_crossover: float = 0.5
    p_mutation: float = 0.6
    max_generations: int = 100
    stall_window: int = 10
    retry_cap: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.population < 2:
            raise ValueError("population must be at least 2")
        for name in ("q", "p_crossover", "p_mutation"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if self.max_generations < 1 or self.stall_window < 1 or self.retry_cap < 1:
            raise ValueError("max_generations, stall_window and retry_cap must be positive")


def av_dispatch_lp(net: DerivedNetwork, b_A, M: float, purchase_cost: float = 0.0):
    """Most profitable AV flows on demand ``b_A`` with active mass at most ``M``.

    Returns ``(x_A, av_profit)``; ``av_profit`` is net of ``purchase_cost``
    per unit of active mass. ``M = inf`` drops the mass bound.
    """
    L = net.L
    b_A = np.asarray(b_A, dtype=float).ravel()
    if b_A.size != L or np.any(b_A < -1e-12):
        raise ValueError("AV demand must be a nonnegative vector of length L")
    if M < 0 or np.isnan(M):
        raise ValueError("M must be nonnegative")
    b_A = np.maximum(b_A, 0.0)
    x = np.zeros((L, L))
    if M == 0 or not np.any(b_A > 0):
        return x, 0.0
    cols = np.flatnonzero(net.usable.ravel() & np.tile(b_A > 0, L))
    C = capacity_matrix(L)[:, cols]
    tau = net.tau_dr.ravel()[cols]
    obj = net.r_A.ravel()[cols] - purchase_cost * tau
    if np.isfinite(M):
        A_ub, b_ub = np.vstack([C, tau]), np.append(b_A, M)
    else:
        A_ub, b_ub = C, b_A
    res = solve_lp(LinearProgram(c=obj, A_ub=A_ub, b_ub=b_ub, A_eq=balance_matrix(net.q)[:, cols],
                                 b_eq=np.zeros(L)))
    if not res.ok:
        raise SolverError(f"AV dispatch LP failed ({res.status})", res.residuals)
    x.ravel()[cols] = res.x
    return x, float(np.sum(obj * res.x))


def _assemble(net, b_C, x_A, av_profit, cv, M, N):
    av_mass = float(np.sum(net.tau_dr * x_A))
    return BilevelSolution(
        b_C=np.asarray(b_C, dtype=float).copy(),
        x_A=x_A,
        cv=cv,
        av_profit=av_profit,
        total_profit=av_profit + cv.platform_profit,
        av_active_mass=av_mass,
        fleet_av=float(M),
        fleet_cv=float(N),
    )


def evaluate_profit(net: DerivedNetwork, b_C, M: float, N: float, seed: int | None = None):
    """Total platform profit when ``b_C`` is revealed to CVs and AVs take the rest.

    Returns ``(total_profit, BilevelSolution)``.
    """
    b_C = check_revealed_demand(net, b_C)
    x_A, av_profit = av_dispatch_lp(net, net.b - b_C, M)
    cv = solve_cv_equilibrium(net, b_C, N, seed=seed)
    sol = _assemble(net, b_C, x_A, av_profit, cv, M, N)
    return sol.total_profit, sol


def av_first(net: DerivedNetwork, M: float, N: float) -> BilevelSolution:
    """AVs serve the most profitable demand they can; CVs get whatever is left."""
    started = time.perf_counter()
    x_A, av_profit = av_dispatch_lp(net, net.b, M)
    b_C = np.clip(net.b - x_A.sum(axis=0), 0.0, net.b)
    b_C[np.abs(b_C) < 1e-12 * (1.0 + net.b)] = 0.0
    cv = solve_cv_equilibrium(net, b_C, N)
    return _assemble(net, b_C, x_A, av_profit, cv, M, N).tagged("av-first", 0, 1, started)


class ProfitOracle:
    """Memoised fitness ``b_C -> total profit`` over the box ``[0, upper]``.

    ``evaluate`` maps a revealed-demand vector to ``(profit, solution)``;
    ``count`` tracks distinct evaluations.
    """

    def __init__(self, upper, evaluate: Callable):
        self.upper = np.asarray(upper, dtype=float)
        self._evaluate = evaluate
        self._cache: dict = {}
        self.count = 0
        self.best = None  # (profit, b_C)

    def clip(self, y):
        return np.clip(np.asarray(y, dtype=float), 0.0, self.upper)

    def solution(self, y):
        y = self.clip(y)
        key = y.tobytes()
        hit = self._cache.get(key)
        if hit is None:
            hit = self._evaluate(y)
            self._cache[key] = hit
            self.count += 1
            if self.best is None or hit[0] > self.best[0]:
                self.best = (hit[0], y.copy())
        return hit

    def __call__(self, y) -> float:
        return self.solution(y)[0]


def bilevel_oracle(net, M, N) -> ProfitOracle:
    return ProfitOracle(net.b, lambda y: evaluate_profit(net, y, M, N))


def fd_gradient(oracle: ProfitOracle, y, h: float, f0: float | None = None) -> np.ndarray:
    """Forward differences, switching to backward ones at an upper bound."""
    y = oracle.clip(y)
    f0 = oracle(y) if f0 is None else f0
    d = np.zeros_like(y)
    for i in range(y.size):
        if oracle.upper[i] <= 0:
            continue
        e = np.zeros_like(y)
        if y[i] + h <= oracle.upper[i]:
            e[i] = h
            d[i] = (oracle(y + e) - f0) / h
        else:
            e[i] = -min(h, y[i]) if y[i] > 0 else 0.0
            if e[i] != 0.0:
                d[i] = (f0 - oracle(y + e)) / (-e[i])
    return d


def numerical_gradient(net: DerivedNetwork, b_C, M: float, N: float, h: float | None = None) -> np.ndarray:
    """Finite-difference slope of the total profit along each region's revealed demand."""
    h = 1e-4 * _default_step(net) if h is None else h
    if not h > 0:
        raise ValueError("h must be positive")
    return fd_gradient(bilevel_oracle(net, M, N), check_revealed_demand(net, b_C), h)
