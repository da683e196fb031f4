"""Closed-form optimum of two-region networks.

With ``b_21 >= b_12`` every flow decomposes into two service cycles: the
*normal* cycle where an empty vehicle always serves locally, and the
*repositioning* cycle where a vehicle emptied in region 1 drives to region 2.
Thresholds on fleet sizes, commission and AV cost decide which vehicles
serve which cycle, which gives the optimum without any search.

Rates are ``2 x 2`` action matrices ``x[i, a]`` (reposition from ``i`` to
``a``, then serve a customer there), matching :mod:`mixedfleet.model`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .model import DerivedNetwork, NetworkSpec, build_derived

__all__ = [
    "TwoRegionAnalysis",
    "ClosedForm",
    "Example1Regime",
    "analyze",
    "closed_form_optimum",
    "closed_form_endogenous",
    "example1_regimes",
    "example1_network",
    "worst_case_network",
    "rates_profit",
]

_EDGE = 1e-9  # relative distance to a threshold at which both sides are evaluated


@dataclass(frozen=True)
class TwoRegionAnalysis:
    x_nor: np.ndarray
    x_rep: np.ndarray
    m_nor: float
    m_rep: float
    gamma1: float
    gamma2: float
    R_th1: float
    R_th2: float
    m_th1: float  # mass serving all of region 1's demand on the normal cycle
    m_th2: float  # mass serving the imbalance b_21 - b_12 on the repositioning cycle
    m_th3: float  # CV mass at which queueing in region 1 starts feeding the second cycle
    w_star: float
    I_th1: float
    I_th2: float
    I_th3: float
    I_th4: float
    I_max: float
    # per unit vehicle mass: platform profit of AVs and commission from CVs
    rA_nor: float
    rA_rep: float
    rP_nor: float
    rP_rep: float
    rC_nor: float  # driver earning on each cycle when nobody waits
    rC_rep: float
    net: DerivedNetwork


class ClosedForm(NamedTuple):
    profit: float
    x_A: np.ndarray
    x_C: np.ndarray
    case: str


class Example1Regime(NamedTuple):
    regime: int
    w1: float
    w2: float
    served: tuple  # (rate of the local cycle in region 1, rate of the 1 -> 2 cycle)


def analyze(spec: NetworkSpec) -> TwoRegionAnalysis:
    """Cycle decomposition and every threshold of a two-region network.

    Needs ``b_21 >= b_12`` (relabel the regions otherwise), ``q_21 > 0``
    and repositioning times equal to trip times off the diagonal.
    """
    if spec.regions != 2:
        raise ValueError(f"two-region analysis needs L = 2, got {spec.regions}")
    d = spec.demand
    if d[1, 0] < d[0, 1]:
        raise ValueError("needs b_21 >= b_12; swap the region labels")
    if d[1, 0] <= 0:
        raise ValueError("needs b_21 > 0 (the cycle rates divide by q_21)")
    t = spec.trip_time
    if spec.reposition_time[0, 1] != t[0, 1] or spec.reposition_time[1, 0] != t[1, 0]:
        raise ValueError("needs repositioning times equal to trip times between the regions")
    if d[0].sum() <= 0:
        raise ValueError("needs positive demand from region 1")
    net = build_derived(spec)
    q = net.q
    p, c, R = spec.price, spec.cost, spec.commission
    k = q[1, 1] / q[1, 0]
    x_nor = np.array([[1.0, 0.0], [0.0, q[0, 1] / q[1, 0]]])
    x_rep = np.array([[0.0, 1.0], [0.0, k]])
    m_nor = q[0, 0] * t[0, 0] + q[0, 1] * t[0, 1] + q[0, 1] * t[1, 0] + q[0, 1] * k * t[1, 1]
    m_rep = t[0, 1] + t[1, 0] + k * t[1, 1]
    serve = t[1, 0] + k * t[1, 1]  # time spent carrying customers per repositioning cycle
    g1 = serve / m_rep
    r2 = (1.0 - R) * p - c
    r1 = g1 * (1.0 - R) * p - c
    g2 = r1 / r2 if r2 > 0 else float("nan")
    b1 = d[0, 0] + d[0, 1]
    m_th1 = b1 * m_nor
    m_th2 = (d[1, 0] - d[0, 1]) * m_rep
    if r1 > 0 and r2 > 0:
        m_th3 = m_th1 / g2
        w_star = (m_th3 - m_th1) / b1
    else:
        m_th3 = w_star = float("inf")
    return TwoRegionAnalysis(
        x_nor=x_nor, x_rep=x_rep, m_nor=float(m_nor), m_rep=float(m_rep), gamma1=float(g1), gamma2=float(g2),
        R_th1=1.0 - c / p, R_th2=1.0 - c / (g1 * p), m_th1=float(m_th1), m_th2=float(m_th2),
        m_th3=float(m_th3), w_star=float(w_star),
        I_th1=g1 * (1.0 - R) * p - c, I_th2=g1 * p - c, I_th3=(1.0 - R) * p - c,
        I_th4=(1.0 - R) * p - c + g1 * R * p, I_max=p - c,
        rA_nor=p - c, rA_rep=g1 * p - c, rP_nor=R * p, rP_rep=g1 * R * p, rC_nor=r2, rC_rep=r1, net=net,
    )


def rates_profit(net: DerivedNetwork, x_A, x_C, purchase_cost: float = 0.0) -> float:
    """Platform profit of given AV and CV action rates."""
    return float(np.sum((net.r_A - purchase_cost * net.tau_dr) * x_A) + np.sum(net.r_C2P * x_C))


# --- exogenous fleets ------------------------------------------------------

def _case_a(a, M, N, b1, imb):
    M_rep = min(imb, (M - a.m_th1) / a.m_rep)
    x_A = b1 * a.x_nor + M_rep * a.x_rep
    x_C = min(N / a.m_rep, max(imb - (M - a.m_th1) / a.m_rep, 0.0)) * a.x_rep
    profit = (a.m_th1 * a.rA_nor + min(M - a.m_th1, a.m_th2) * a.rA_rep
              + min(N, max(a.m_th1 + a.m_th2 - M, 0.0)) * a.rP_rep)
    return ClosedForm(profit, x_A, x_C, "a")


def _case_b(a, M, N):
    return ClosedForm(M * a.rA_nor + N * a.rP_nor, M / a.m_nor * a.x_nor, N / a.m_nor * a.x_nor, "b")


def _case_c(a, M, N, imb):
    x_A = M / a.m_nor * a.x_nor
    x_C = (a.m_th1 - M) / a.m_nor * a.x_nor + imb * a.x_rep
    profit = M * a.rA_nor + (a.m_th1 - M) * a.rP_nor + a.m_th2 * a.rP_rep
    return ClosedForm(profit, x_A, x_C, "c")


def _av_first_d(a, M, N, b1):
    extra = max(N - (a.m_th1 - M) / a.gamma2, 0.0)
    x_A = M / a.m_nor * a.x_nor
    x_C = (b1 - M / a.m_nor) * a.x_nor + extra / a.m_rep * a.x_rep
    profit = M * a.rA_nor + (a.m_th1 - M) * a.rP_nor + extra * a.rP_rep
    return ClosedForm(profit, x_A, x_C, "d-av-first")


def _cv_first_d(a, M, N, b1):
    spare = max(M - a.m_th2, 0.0)
    nor_A = max(spare, a.m_th1 - N)
    rep_A = min(M, a.m_th2, M + N - a.m_th1)
    nor_C = min(a.m_th1 - spare, N)
    x_A = nor_A / a.m_nor * a.x_nor + rep_A / a.m_rep * a.x_rep
    x_C = nor_C / a.m_nor * a.x_nor
    profit = nor_A * a.rA_nor + rep_A * a.rA_rep + nor_C * a.rP_nor
    return ClosedForm(profit, x_A, x_C, "d-cv-first")


def _hide_d(a, M, N, b1):
    d, t = a.net.spec.demand, a.net.spec.trip_time
    m_th4 = (d[1, 0] - M / a.m_th1 * d[0, 1]) * a.m_rep
    over = max(N - m_th4, 0.0)
    # mass per unit of the shift below: b_11 t_11 driving plus the queue
    # that keeps region 1 as attractive as the repositioning cycle
    denom = d[0, 0] * t[0, 0] + a.m_th1 / a.gamma2 - a.m_th1
    shift = np.array([[b1, -d[0, 1]], [0.0, d[0, 1]]])
    x_A = M / a.m_nor * a.x_nor
    x_C = min(m_th4, N) / a.m_rep * a.x_rep + over / denom * shift
    profit = (M * a.rA_nor + (N - a.m_th1 * over / (denom * a.gamma2)) * a.rP_rep
              + over / denom * a.m_th1 * a.rP_nor)
    return ClosedForm(profit, x_A, x_C, "d-hide")


def _exogenous_cases(a, M, N):
    """Labels of the cases whose conditions hold at ``(M, N)`` up to ``_EDGE``."""
    tol = _EDGE * (1.0 + a.m_th1 + a.m_th2 + M + N)
    top = (a.m_th1 - M) / a.gamma2 + a.m_th2
    cases = set()
    if M >= a.m_th1 - tol:
        cases.add("a")
    if M <= a.m_th1 + tol:
        if N + M <= a.m_th1 + tol:
            cases.add("b")
        if N >= top - tol:
            cases.add("c")
        if N + M >= a.m_th1 - tol and N <= top + tol and M < a.m_th1:
            cases.add("d")
    return cases


def closed_form_optimum(spec: NetworkSpec, M: float, N: float) -> ClosedForm:
    """Optimal platform profit and rates for fleets ``M`` (AV) and ``N`` (CV).

    Covers commissions with ``R <= R_th2``, where CVs are willing to serve
    both cycles. In the mixed case the best of hiding demand, AV-first and
    CV-first is returned. Near a case boundary both sides are evaluated.
    """
    if M < 0 or N < 0:
        raise ValueError("fleet sizes must be nonnegative")
    a = analyze(spec)
    R = spec.commission
    if not R <= a.R_th2 or not a.rC_rep > 0:
        raise ValueError(f"closed form covers R <= R_th2 = {a.R_th2:.6g} with a profitable second cycle")
    d = spec.demand
    b1, imb = d[0, 0] + d[0, 1], d[1, 0] - d[0, 1]
    found = []
    for case in sorted(_exogenous_cases(a, M, N)):
        if case == "a":
            found.append(_case_a(a, M, N, b1, imb))
        elif case == "b":
            found.append(_case_b(a, M, N))
        elif case == "c":
            found.append(_case_c(a, M, N, imb))
        else:
            found.append(_hide_d(a, M, N, b1))
            found.append(_av_first_d(a, M, N, b1))
            if N < (a.m_th1 - M) / a.gamma2 + min(a.m_th2, M) + _EDGE * (1.0 + N):
                found.append(_cv_first_d(a, M, N, b1))
    best = max(found, key=lambda f: f.profit)
    return ClosedForm(float(best.profit), best.x_A, best.x_C, best.case)


# --- endogenous fleets -----------------------------------------------------

def _endogenous_rates(a, I, N_max, case):
    d, t = a.net.spec.demand, a.net.spec.trip_time
    b1, imb = d[0, 0] + d[0, 1], d[1, 0] - d[0, 1]
    X_nor, X_rep = b1 * a.x_nor, imb * a.x_rep
    mass_rep, mass_nor = a.m_th2, a.m_th1
    r1, r2 = a.rC_rep, a.rC_nor
    R, p, c = a.net.spec.commission, a.net.spec.price, a.net.spec.cost

    def n_p(r):
        return max(r, 0.0) * N_max / r2 if r2 > 0 else 0.0

    # CV mass serving every cycle, including the queue in region 1 that
    # holds the normal cycle down to the repositioning cycle's earning
    wait = mass_nor * (r2 / r1 - 1.0) if r1 > 0 else float("inf")
    total = mass_rep + mass_nor + wait
    rep_share = min(1.0, n_p(r1) / mass_rep) if mass_rep > 0 else 1.0
    nor_share = float(np.clip((n_p(r1) - mass_rep) / (total - mass_rep), 0.0, 1.0)) if np.isfinite(total) else 0.0
    if case == "I":
        return X_nor + X_rep, np.zeros((2, 2))
    if case == "II":
        x_C = rep_share * X_rep
        return X_nor + X_rep - x_C, x_C
    if case in ("III", "IV-A"):
        return X_nor.copy(), rep_share * X_rep
    if case == "III'":
        x_C = rep_share * X_rep + nor_share * X_nor
        return X_nor + X_rep - x_C, x_C
    if case == "IV-B":
        return (1.0 - nor_share) * X_nor, rep_share * X_rep + nor_share * X_nor
    if case == "V-A":
        share = min(1.0, n_p(r2) / mass_nor)
        return max(0.0, 1.0 - n_p(r2) / mass_nor) * X_nor, share * X_nor
    raise ValueError(case)


_ENDOGENOUS_CASES = ("I", "II", "III", "III'", "IV-A", "IV-B", "V-A")


def _endogenous_label(a, I, N_max):
    new_order = a.I_th3 < a.I_th2
    if I < a.I_th1:
        return "I"
    if I < min(a.I_th2, a.I_th3):
        return "II"
    if not new_order and I < a.I_th3:
        return "III"
    if new_order and I < a.I_th2:
        return "III'"
    r2 = a.rC_nor
    n1 = a.rC_rep * N_max / r2 if r2 > 0 else 0.0
    if I < a.I_th4:
        return "IV-A" if n1 < a.m_th2 else "IV-B"
    R, p, c = a.net.spec.commission, a.net.spec.price, a.net.spec.cost
    mass_rep, mass_nor = a.m_th2, a.m_th1
    wait = mass_nor * (r2 / a.rC_rep - 1.0) if a.rC_rep > 0 else float("inf")
    total = mass_rep + mass_nor + wait
    excess = I + c - (1.0 - R) * p
    m_th4 = max(mass_nor * excess / (R * p) / a.gamma1,
                total - (total - mass_rep) * R * p * a.gamma1 * mass_rep / (mass_nor * excess))
    if n1 < m_th4:
        return "V-A"
    return "IV-A" if n1 < mass_rep else "IV-B"


def closed_form_endogenous(spec: NetworkSpec, I: float, N_max: float) -> ClosedForm:
    """Optimum with AVs bought at cost ``I`` and a pool of ``N_max`` potential drivers.

    The case follows from ``I`` against the thresholds ``I_th1..I_th4``
    (either ordering of ``I_th2`` and ``I_th3``) and from how many drivers
    join at the earning of each cycle. The profit is evaluated from the
    case's rates. The rates of the other cases are feasible too and win
    when few drivers are available; the best is returned under its own
    label. At ``I >= I_max`` no AVs are bought.
    """
    if I < 0 or N_max < 0:
        raise ValueError("I and N_max must be nonnegative")
    a = analyze(spec)
    if not a.rC_rep > 0:
        raise ValueError("closed form needs drivers to profit from the repositioning cycle")
    label = _endogenous_label(a, I, N_max)
    found = []
    # every case's rates are a consistent equilibrium for any I; the
    # thresholds on I ignore that drivers join in larger numbers when they
    # serve the better paid cycle, so all constructions are compared
    for case in _ENDOGENOUS_CASES:
        x_A, x_C = _endogenous_rates(a, I, N_max, case)
        if I >= a.I_max:
            x_A = np.zeros((2, 2))
        found.append(ClosedForm(rates_profit(a.net, x_A, x_C, I), x_A, x_C, case))
    best = max(found, key=lambda f: f.profit)
    own = next(f for f in found if f.case == label)
    if own.profit >= best.profit - _EDGE * (1.0 + abs(best.profit)):
        return own
    return best


# --- Example 1 -------------------------------------------------------------

def example1_network(b: float = 1.0, tau: float = 1.0, commission: float = 0.5, price: float | None = None,
                     cost: float = 0.0) -> NetworkSpec:
    """Two regions, every trip ends in region 1, all travel times ``tau``.

    ``price`` defaults to ``1 / tau`` so that each trip pays one unit.
    """
    price = 1.0 / tau if price is None else price
    return NetworkSpec(regions=2, demand=[[b, 0.0], [b, 0.0]], trip_time=np.full((2, 2), float(tau)),
                       price=price, cost=cost, commission=commission)


def worst_case_network(b11: float = 1.0, b21: float = 1.0, tau: float = 1.0, commission: float = 1.0 - 1e-9):
    """Instance where AV-first loses a fifth of the optimum as ``commission -> 1``.

    Returns ``(spec, M, N)`` with ``M = b11 tau / 2`` and ``N = b11 tau``.
    """
    spec = NetworkSpec(regions=2, demand=[[b11, 0.0], [b21, 0.0]], trip_time=np.full((2, 2), float(tau)),
                       price=1.0, cost=0.0, commission=commission)
    return spec, 0.5 * b11 * tau, b11 * tau


def example1_regimes(b: float, tau: float, m: float) -> Example1Regime:
    """Equilibrium of a driver mass ``m`` in the Example 1 network.

    Regime 1: ``m <= b tau``, no queues. Regime 2: ``m <= 2 b tau``, a queue
    in region 1 only. Regime 3: ``m <= 4 b tau``, the surplus repositions to
    region 2 without queueing there. Regime 4: both regions saturated and
    ``1/(tau + w_1) = 1/(2 tau + w_2)``.
    """
    if not (b > 0 and tau > 0):
        raise ValueError("Example 1 needs b > 0 and tau > 0")
    if m < 0:
        raise ValueError("mass must be nonnegative")
    if m <= b * tau:
        return Example1Regime(1, 0.0, 0.0, (m / tau, 0.0))
    if m <= 2 * b * tau:
        return Example1Regime(2, m / b - tau, 0.0, (b, 0.0))
    if m <= 4 * b * tau:
        return Example1Regime(3, tau, 0.0, (b, (m - 2 * b * tau) / (2 * tau)))
    # m = b (tau + w1) + b (2 tau + w2) with w1 = w2 + tau
    w2 = (m / b - 4 * tau) / 2.0
    return Example1Regime(4, w2 + tau, w2, (b, b))
