import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from conftest import fig3_spec, random_spec
from mixedfleet.cv_eq import (
    CvEquilibrium,
    IdentityError,
    controlled_cv_lp,
    platform_profit_from_cv,
    solve_cv_equilibrium,
    verify_equilibrium,
)
from mixedfleet.model import NetworkSpec, build_derived


def test_example1_both_cycles_without_queue_in_region_two(example1):
    eq = solve_cv_equilibrium(example1, example1.b, 3.0)
    assert eq.w_C[0] == pytest.approx(1.0, abs=1e-7)
    assert eq.w_C[1] == pytest.approx(0.0, abs=1e-7)
    assert eq.x_C[0, 0] > 0.1 and eq.x_C[0, 1] > 0.1


def test_example1_both_queues_equalise_reward_rates(example1):
    # 1/(tau + w1) = 1/(2 tau + w2), so w1 = w2 + tau
    eq = solve_cv_equilibrium(example1, example1.b, 5.0)
    w1, w2 = eq.w_C
    assert w2 > 0
    assert w1 == pytest.approx(w2 + 1.0, abs=1e-7)
    assert 1 / (1 + w1) == pytest.approx(1 / (2 + w2), abs=1e-9)
    assert eq.x_C.sum(axis=0) == pytest.approx([1.0, 1.0], abs=1e-7)


def test_nothing_revealed(fig3):
    eq = solve_cv_equilibrium(fig3, [0.0, 0.0], 10.0)
    assert np.all(eq.x_C == 0) and eq.platform_profit == 0.0


def test_zero_fleet(fig3):
    eq = solve_cv_equilibrium(fig3, fig3.b, 0.0)
    assert np.all(eq.x_C == 0) and eq.platform_profit == 0.0


def test_bad_inputs(fig3):
    with pytest.raises(ValueError):
        solve_cv_equilibrium(fig3, [3.0, 0.0], 1.0)
    with pytest.raises(ValueError):
        solve_cv_equilibrium(fig3, fig3.b, -1.0)
    with pytest.raises(ValueError):
        solve_cv_equilibrium(fig3, [1.0], 1.0)


def test_example1_platform_profit(example1):
    eq = solve_cv_equilibrium(example1, example1.b, 1.0)
    assert platform_profit_from_cv(eq, example1) == pytest.approx(0.5, abs=1e-9)
    # zero cost: commission is R/(1-R) times the drivers' profit
    assert eq.platform_profit == pytest.approx(eq.driver_profit, abs=1e-12)


def test_transfer_identity_violation_raises(example1):
    eq = solve_cv_equilibrium(example1, example1.b, 1.0)
    eq.driver_profit += 0.1
    with pytest.raises(IdentityError):
        platform_profit_from_cv(eq, example1)


def test_zero_equilibrium_profit(fig3):
    assert platform_profit_from_cv(CvEquilibrium.zero(2, fig3.b, 0.0), fig3) == 0.0


def test_verification_passes_and_catches_faults(fig3):
    eq = solve_cv_equilibrium(fig3, fig3.b, 10.0)
    report = verify_equilibrium(eq, fig3)
    assert report.passed, report.table()

    bad = CvEquilibrium(eq.x_C.copy(), eq.w_C, eq.driver_profit, eq.active_mass, eq.platform_profit,
                        eq.revealed_demand, eq.fleet_size)
    bad.x_C[0, 0] += 0.1
    assert "flow_balance" in verify_equilibrium(bad, fig3).failed()

    slack = solve_cv_equilibrium(fig3, fig3.b, 5.0)  # w = 0, region 2 not saturated
    served = slack.x_C.sum(axis=0)
    i = int(np.argmax(fig3.b - served))
    assert fig3.b[i] - served[i] > 1e-3
    w = slack.w_C.copy()
    w[i] += 0.5
    bad = CvEquilibrium(slack.x_C, w, slack.driver_profit, slack.active_mass, slack.platform_profit,
                        slack.revealed_demand, slack.fleet_size)
    assert "complementary_slackness" in verify_equilibrium(bad, fig3).failed()


def test_controlled_lp_examples(fig3, example1):
    assert np.all(controlled_cv_lp(fig3, fig3.b, 0.0).x == 0)
    eq = solve_cv_equilibrium(fig3, fig3.b, 10.0)
    lp = controlled_cv_lp(fig3, fig3.b, eq.active_mass)
    assert lp.objective == pytest.approx(eq.driver_profit, abs=1e-6)
    # one fully served unit-rate cycle: (1 - R) p b
    assert controlled_cv_lp(example1, example1.b, 1.0).objective == pytest.approx(0.5, abs=1e-9)


def test_hiding_demand_can_raise_commission():
    # regression fixture: with 12 drivers, revealing everything piles them up in
    # region 1, while hiding most of region 1 pushes them onto region 2 trips
    net = build_derived(fig3_spec())
    full = solve_cv_equilibrium(net, net.b, 12.0).platform_profit
    hidden = solve_cv_equilibrium(net, [0.8, 3.0], 12.0).platform_profit
    assert full == pytest.approx(2.75, abs=1e-9)
    assert hidden == pytest.approx(3.0583333333333336, abs=1e-9)


def test_simultaneously_binding_capacities():
    # revealed demand on (or within 1e-8 of) the self-loop cycle's ratio with the
    # fleet just saturating it; both capacity rows approach tightness together
    net = build_derived(fig3_spec())
    cases = [([1.59699616, 1.19774753], 4.391747155131094),
             ([0.24702115297703803, 0.18526586722983077], 0.679436036223432)]
    for b_C, N in cases:
        for n in (N, N * (1 + 1e-9), N * (1 - 1e-6)):
            eq = solve_cv_equilibrium(net, b_C, n)
            assert verify_equilibrium(eq, net).passed


@pytest.mark.parametrize("demand, trip, cost, R, b_C, N", [
    # both capacity slacks sit near 2e-9 at the barrier's last step; only
    # region 1 is truly tight
    ([[1.5736444575519606, 0.5750542360361373], [1.2733105149357304, 0.45621977631002397]],
     [[1.2148404582077952, 2.2239319146059406], [2.11973210269674, 1.9379632128804885]],
     0.04352938556135342, 0.700567393869157, [0.9010412020666213, 0.32754561206512084], 2.3636503681207386),
    # the optimum can also keep both rows tight with a 5e-10 repositioning flow
    ([[1.5365723631155432, 0.5494684992248887], [1.9552966240828837, 1.8815585019886023]],
     [[2.5334177810323877, 1.2516447633809655], [2.2376124867101095, 0.5744111641964712]],
     0.03578320523232519, 0.5283275721360225, [1.011181915340085, 0.5226512983601396], 4.508719296837504),
])
def test_near_degenerate_rows_on_random_networks(demand, trip, cost, R, b_C, N):
    net = build_derived(NetworkSpec(2, demand, trip, 1.0, cost, R))
    eq = solve_cv_equilibrium(net, b_C, N)
    report = verify_equilibrium(eq, net)
    assert report.passed, report.table()


# --- properties ------------------------------------------------------------

instances = st.tuples(st.integers(0, 10**6), st.integers(2, 3))


def _instance(seed, L):
    rng = np.random.default_rng(seed)
    net = build_derived(random_spec(rng, L))
    b_C = net.b * rng.uniform(0, 1, L) * (rng.random(L) < 0.9)
    N = float(rng.uniform(0.2, 12.0))
    return rng, net, b_C, N


@given(instances)
def test_random_equilibria_verify(inst):
    _, net, b_C, N = _instance(*inst)
    eq = solve_cv_equilibrium(net, b_C, N)
    report = verify_equilibrium(eq, net)
    assert report.passed, report.table()


@given(instances)
def test_profit_and_mass_unique_over_restarts(inst):
    _, net, b_C, N = _instance(*inst)
    runs = [solve_cv_equilibrium(net, b_C, N, seed=s) for s in range(20)]
    pi = np.array([r.platform_profit for r in runs])
    m0 = np.array([r.active_mass for r in runs])
    assert np.ptp(pi) <= 1e-6 * max(1.0, np.abs(pi).max())
    assert np.ptp(m0) <= 1e-6 * max(1.0, np.abs(m0).max())


@given(instances, st.floats(1.01, 4.0))
def test_profit_non_decreasing_in_fleet(inst, factor):
    _, net, b_C, N = _instance(*inst)
    assert solve_cv_equilibrium(net, b_C, factor * N).platform_profit >= \
        solve_cv_equilibrium(net, b_C, N).platform_profit - 1e-7


@given(instances)
def test_equilibrium_acts_as_if_controlled(inst):
    _, net, b_C, N = _instance(*inst)
    eq = solve_cv_equilibrium(net, b_C, N)
    lp = controlled_cv_lp(net, b_C, eq.active_mass)
    assert lp.objective == pytest.approx(eq.driver_profit, abs=1e-6)


@given(instances)
def test_no_hiding_without_queues(inst):
    rng, net, b_C, N = _instance(*inst)
    eq = solve_cv_equilibrium(net, b_C, N)
    assume(np.all(eq.w_C <= 1e-9))
    for _ in range(50):
        reduced = b_C * rng.uniform(0, 1, net.L)
        assert solve_cv_equilibrium(net, reduced, N).platform_profit <= eq.platform_profit + 1e-7
