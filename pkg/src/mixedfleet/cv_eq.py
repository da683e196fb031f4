"""Conventional-vehicle equilibrium for a given revealed demand.

Self-interested drivers that pick repositioning actions to maximise their
long-run earning rate settle where the concave program

    maximize N*log(r_C@x) - tau@x   s.t. capacity b_C, flow balance, x >= 0

is optimal; the capacity multipliers are the waiting times.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DerivedNetwork
from .settings import SETTINGS
from .solvers.concave import balance_matrix, capacity_matrix, solve_concave_log
from .solvers.lp import LinearProgram, SolveResult, solve_lp

__all__ = [
    "SolverError",
    "IdentityError",
    "CvEquilibrium",
    "ValidationReport",
    "solve_cv_equilibrium",
    "platform_profit_from_cv",
    "verify_equilibrium",
    "controlled_cv_lp",
    "check_revealed_demand",
]


class SolverError(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or {}


class IdentityError(AssertionError):
    pass


@dataclass
class CvEquilibrium:
    x_C: np.ndarray
    w_C: np.ndarray
    driver_profit: float
    active_mass: float
    platform_profit: float
    revealed_demand: np.ndarray
    fleet_size: float
    residuals: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, L, b_C, N):
        return cls(np.zeros((L, L)), np.zeros(L), 0.0, 0.0, 0.0, np.asarray(b_C, float).copy(), float(N))


@dataclass
class ValidationReport:
    checks: list  # (name, max residual, passed)
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(ok for _, _, ok in self.checks)

    def failed(self) -> list:
        return [name for name, _, ok in self.checks if not ok]

    def __getitem__(self, name):
        for n, res, ok in self.checks:
            if n == name:
                return res, ok
        raise KeyError(name)

    def table(self) -> str:
        width = max(len(n) for n, _, _ in self.checks)
        lines = [f"{n:<{width}}  {res:11.3e}  {'pass' if ok else 'FAIL'}" for n, res, ok in self.checks]
        return "\n".join(lines)


SNAP = 1e-9


def check_revealed_demand(net: DerivedNetwork, b_C, tol=1e-9) -> np.ndarray:
    """Validate ``0 <= b_C <= b`` and clip round-off at the bounds.

    Entries below ``SNAP * (1 + b_i)`` are set to zero: such slivers of
    demand would need waiting times beyond what double precision resolves.
    """
    b_C = np.asarray(b_C, dtype=float).ravel()
    if b_C.size != net.L:
        raise ValueError(f"revealed demand has length {b_C.size}, expected {net.L}")
    scale = tol * (1.0 + net.b)
    if np.any(~np.isfinite(b_C)) or np.any(b_C < -scale) or np.any(b_C > net.b + scale):
        raise ValueError("revealed demand must satisfy 0 <= b_C <= b")
    b_C = np.clip(b_C, 0.0, net.b)
    b_C[b_C < SNAP * (1.0 + net.b)] = 0.0
    return b_C


def solve_cv_equilibrium(net: DerivedNetwork, b_C, N: float, seed: int | None = None) -> CvEquilibrium:
    """Equilibrium action rates and waiting times of ``N`` drivers facing ``b_C``.

    ``seed`` randomises the solver's starting point only.
    """
    b_C = check_revealed_demand(net, b_C)
    if N < 0 or not np.isfinite(N):
        raise ValueError("N must be finite and nonnegative")
    L = net.L
    if N == 0:
        return CvEquilibrium.zero(L, b_C, N)
    res = solve_concave_log(net.r_C, net.tau_dr, N, b_C, net.q, usable=net.usable, seed=seed)
    if res.status == "infeasible":
        return CvEquilibrium.zero(L, b_C, N)
    if not res.ok:
        raise SolverError(f"driver equilibrium solve failed ({res.status})", res.residuals)
    x = res.x.reshape(L, L)
    return CvEquilibrium(
        x_C=x,
        w_C=res.duals.copy(),
        driver_profit=float(np.sum(net.r_C * x)),
        active_mass=float(np.sum(net.tau_dr * x)),
        platform_profit=float(np.sum(net.r_C2P * x)),
        revealed_demand=b_C,
        fleet_size=float(N),
        residuals=res.residuals,
    )


def _transfer_value(eq: CvEquilibrium, net: DerivedNetwork) -> float:
    R, c = net.spec.commission, net.spec.cost
    return R / (1.0 - R) * (eq.driver_profit + c * eq.active_mass)


def platform_profit_from_cv(eq: CvEquilibrium, net: DerivedNetwork, tol: float = 1e-7) -> float:
    """Commission earned from CV trips; cross-checked against the driver side."""
    direct = float(np.sum(net.r_C2P * eq.x_C))
    via_drivers = _transfer_value(eq, net)
    if abs(direct - via_drivers) > tol * (1.0 + abs(direct)):
        raise IdentityError(f"platform profit {direct} disagrees with driver-side value {via_drivers}")
    return direct


def controlled_cv_lp(net: DerivedNetwork, b_C, m0: float) -> SolveResult:
    """Best driver profit when the platform steers an active mass of at most ``m0``.

    ``x`` is returned flat over all ``L*L`` actions; ``duals`` lists the
    capacity multipliers followed by the mass multiplier.
    """
    b_C = check_revealed_demand(net, b_C)
    if m0 < 0:
        raise ValueError("m0 must be nonnegative")
    L = net.L
    cols = np.flatnonzero(net.usable.ravel())
    C = capacity_matrix(L)[:, cols]
    A = balance_matrix(net.q)[:, cols]
    tau = net.tau_dr.ravel()[cols]
    lp = LinearProgram(c=net.r_C.ravel()[cols], A_ub=np.vstack([C, tau]), b_ub=np.append(b_C, m0),
                       A_eq=A, b_eq=np.zeros(L))
    res = solve_lp(lp)
    x = np.zeros(L * L)
    x[cols] = res.x
    res.x = x
    return res


def verify_equilibrium(eq: CvEquilibrium, net: DerivedNetwork, b_C=None, N=None,
                       tol: float | None = None) -> ValidationReport:
    """Check every equilibrium condition; failures are reported, not raised.

    Best response is checked directly: with the waiting times held fixed, no
    reallocation of the same vehicle mass over balanced action cycles earns
    more than the equilibrium flows do.
    """
    tol = SETTINGS.validation_tol if tol is None else tol
    L = net.L
    b_C = eq.revealed_demand if b_C is None else np.asarray(b_C, dtype=float)
    N = eq.fleet_size if N is None else float(N)
    x = np.asarray(eq.x_C, dtype=float).reshape(L, L)
    w = np.asarray(eq.w_C, dtype=float).ravel()
    checks = []

    def add(name, value):
        value = float(value)
        checks.append((name, value, bool(np.isfinite(value) and value <= tol)))

    xf = x.ravel()
    usable = net.usable.ravel() & np.tile(b_C > 0, L)
    add("nonnegativity", max(np.max(-xf, initial=0.0), np.max(-w, initial=0.0)))
    add("usable_actions", np.max(np.abs(xf[~usable]), initial=0.0))
    add("flow_balance", np.max(np.abs(balance_matrix(net.q) @ xf)))
    served = x.sum(axis=0)
    add("capacity", np.max(served - b_C, initial=0.0))
    add("complementary_slackness", np.max(np.abs(w * (b_C - served)), initial=0.0))

    driver = float(np.sum(net.r_C * x))
    m0 = float(np.sum(net.tau_dr * x))
    mass_res = abs(m0 + w @ served - N) if driver > 0 else 0.0
    add("mass_identity", mass_res)

    # best response against fixed waiting times
    cols = np.flatnonzero(usable)
    if cols.size and N > 0:
        cycle_time = (net.tau_dr + w[None, :]).ravel()[cols]
        lp = LinearProgram(c=net.r_C.ravel()[cols], A_ub=cycle_time[None, :], b_ub=[N],
                           A_eq=balance_matrix(net.q)[:, cols], b_eq=np.zeros(L))
        br = solve_lp(lp)
        gap = br.objective - driver if br.ok else np.inf
        add("best_response", max(gap, 0.0))
    else:
        add("best_response", 0.0)

    R, c = net.spec.commission, net.spec.cost
    direct = float(np.sum(net.r_C2P * x))
    add("transfer_identity", abs(direct - R / (1.0 - R) * (driver + c * m0)))
    add("reported_totals", max(abs(driver - eq.driver_profit), abs(m0 - eq.active_mass),
                               abs(direct - eq.platform_profit)))
    return ValidationReport(checks=checks, tolerance=tol)
