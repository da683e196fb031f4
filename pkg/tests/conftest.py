import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import mixedfleet.bilevel.core as _core
import mixedfleet.cv_eq as _cv_eq
import mixedfleet.endogenous as _endo
from mixedfleet.model import NetworkSpec, build_derived
from mixedfleet.solvers.concave import balance_matrix

settings.register_profile(
    "repo", deadline=None, max_examples=25, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("repo")

FIG3 = dict(regions=2, demand=[[1.0, 1.0], [2.0, 1.0]], trip_time=[[1.0, 2.0], [2.0, 1.0]],
            price=1.0, cost=0.1, commission=0.5)
TABLE4_DEMAND = [[0, 2, 1, 2], [0, 0, 1, 2], [1, 2, 0, 2], [0, 2, 2, 0]]


def fig3_spec(**changes):
    return NetworkSpec(**{**FIG3, **changes})


def table4_spec():
    coords = np.array([(0, 0), (0, 1), (1, 0), (1, 1)])
    dist = np.abs(coords[:, None, :] - coords[None, :, :]).sum(axis=2).astype(float)
    return NetworkSpec(regions=4, demand=TABLE4_DEMAND, trip_time=dist, reposition_time=dist.copy(),
                       price=1.0, cost=0.1, commission=0.7)


def example1_spec(b=1.0, tau=1.0, R=0.5):
    return NetworkSpec(regions=2, demand=[[b, 0.0], [b, 0.0]], trip_time=np.full((2, 2), tau),
                       price=1.0 / tau, cost=0.0, commission=R)


def random_spec(rng, L, cost=None, zero_prob=0.25):
    while True:
        d = rng.uniform(0.2, 2.0, (L, L))
        d[rng.random((L, L)) < zero_prob] = 0.0
        if d.sum() > 0:
            break
    t = rng.uniform(0.5, 3.0, (L, L))
    c = rng.uniform(0.0, 0.3) if cost is None else cost
    return NetworkSpec(regions=L, demand=d, trip_time=t, price=1.0, cost=c, commission=rng.uniform(0.1, 0.9))


@pytest.fixture
def fig3():
    return build_derived(fig3_spec())


@pytest.fixture
def table4():
    return build_derived(table4_spec())


@pytest.fixture
def example1():
    return build_derived(example1_spec())


# --- audit of every equilibrium the suite produces -------------------------

AUDIT = {"count": 0, "worst": 0.0, "where": None}
AUDIT_TOL = 1e-6


def equilibrium_residual(eq, net):
    """Largest violation of balance, capacity, slackness and mass conservation."""
    L = net.L
    x = eq.x_C.reshape(L, L)
    w = eq.w_C
    served = x.sum(axis=0)
    res = [
        np.max(np.abs(balance_matrix(net.q) @ x.ravel())),
        np.max(served - eq.revealed_demand, initial=0.0),
        np.max(np.abs(w * (eq.revealed_demand - served)), initial=0.0),
        max(np.max(-x, initial=0.0), np.max(-w, initial=0.0)),
    ]
    if eq.driver_profit > 0:
        m0 = float(np.sum(net.tau_dr * x))
        res.append(abs(m0 + w @ served - eq.fleet_size) / max(1.0, eq.fleet_size))
    return float(max(res))


def _audited(fn):
    def wrapper(net, b_C, N, *args, **kwargs):
        eq = fn(net, b_C, N, *args, **kwargs)
        r = equilibrium_residual(eq, net)
        AUDIT["count"] += 1
        if r > AUDIT["worst"]:
            AUDIT["worst"] = r
            AUDIT["where"] = (np.asarray(b_C).tolist(), float(N))
        return eq

    wrapper.__wrapped__ = fn
    return wrapper


_solve = _cv_eq.solve_cv_equilibrium
for _mod in (_cv_eq, _core, _endo):
    _mod.solve_cv_equilibrium = _audited(_solve)


ACCEPTANCE = []  # one line per acceptance criterion, filled by test_acceptance


def pytest_terminal_summary(terminalreporter):
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
    terminalreporter.write_line(
        f"equilibrium audit: {AUDIT['count']} equilibria, worst residual {AUDIT['worst']:.2e} "
        f"(limit {AUDIT_TOL:g})")


def pytest_sessionfinish(session, exitstatus):
    if AUDIT["worst"] > AUDIT_TOL and session.exitstatus == 0:
        session.exitstatus = 1
