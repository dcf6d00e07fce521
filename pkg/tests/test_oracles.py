import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import budgets, make_instance, reference_params
from sc3loop import verify
from sc3loop.control import bound_derivatives
from sc3loop.critic import LoopBudget, solve_p3
from sc3loop.oracles import (EnumerationCapExceeded, GridSpec, OracleInfeasible,
                             brute_force_assignment, count_pairings, enumerate_pairings,
                             finite_diff_check, grid_search_allocation)


def test_enumerate_pairings_examples():
    assert list(enumerate_pairings([(0, 1), (1, 2)])) == [(0, 1), (0, 2), (1, 2)]
    assert list(enumerate_pairings([(0,), (3,), (2,)])) == [(0, 3, 2)]
    for S in range(1, 7):
        assert len(list(enumerate_pairings([tuple(range(S))] * S))) == math.factorial(S)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_enumeration_complete_and_duplicate_free(seed):
    rng = np.random.default_rng(seed)
    S, K = int(rng.integers(2, 6)), int(rng.integers(1, 4))
    sets = [tuple(sorted(rng.choice(S, int(rng.integers(1, S + 1)), replace=False)))
            for _ in range(K)]
    got = list(enumerate_pairings(sets))
    assert len(got) == len(set(got))
    import itertools
    brute = {p for p in itertools.product(*sets) if len(set(p)) == K}
    assert set(got) == brute


def test_enumeration_cap():
    with pytest.raises(EnumerationCapExceeded) as exc:
        list(enumerate_pairings([tuple(range(10))] * 5, cap=1000))
    assert exc.value.estimate == count_pairings([tuple(range(10))] * 5) == 100_000


def test_brute_force_assignment_example():
    perm, val = brute_force_assignment(np.array([[0.6, 0.1], [0.3, 0.4]]))
    assert perm == (0, 1) and val == pytest.approx(1.0)


def test_grid_zero_budget_infeasible():
    topo, ch, pairing = make_instance([10])
    with pytest.raises(OracleInfeasible):
        grid_search_allocation(pairing, topo, ch, budgets(bandwidth=0.0), LoopBudget())
    with pytest.raises(ValueError):
        GridSpec(points=2)


def test_grid_one_dimensional_toy():
    # CPU and DL power so large that only bandwidth matters: the cost is
    # decreasing in B, so the optimum spends the whole budget
    topo, ch, pairing = make_instance([10], ul=1e-10, dl=1e-6)
    bud = budgets(bandwidth=1e5, cpu=1e12, dl_power=10.0)
    g = grid_search_allocation(pairing, topo, ch, bud, LoopBudget())
    assert g.bandwidth[0] == pytest.approx(bud.bandwidth, rel=1e-6)
    t_u, rho = LoopBudget().t_u, 0.01
    d = rho * t_u * bud.bandwidth * math.log2(1 + 0.1 * 1e-10 / (bud.bandwidth * bud.noise_psd))
    expected = bound_derivatives(d - 10, reference_params(10))[0]
    assert g.objective == pytest.approx(float(expected), rel=1e-9)


def test_grid_agrees_with_solver_single_loop():
    topo, ch, pairing = make_instance([20], ul=3e-10, dl=2e-10, gamma=200)
    bud = budgets(bandwidth=1e5, cpu=2e8, dl_power=0.5)
    g = grid_search_allocation(pairing, topo, ch, bud, LoopBudget())
    a = solve_p3(pairing, topo, ch, bud)
    assert abs(a.total_cost - g.objective) / g.objective <= 1e-3
    assert g.objective >= a.total_cost - g.bracket


def test_grid_rejects_three_loops():
    topo, ch, pairing = make_instance([10, 10, 10])
    with pytest.raises(ValueError):
        grid_search_allocation(pairing, topo, ch, budgets(), LoopBudget())


def test_finite_diff_quadratic():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -2.0])

    def f(x):
        return 0.5 * x @ A @ x + b @ x

    x0 = np.array([0.3, -0.7])
    g = finite_diff_check(f, x0, 1e-4, analytic=A @ x0 + b)
    assert g.rel_error < 1e-8
    h = finite_diff_check(f, x0, 1e-4, analytic=A, order=2)
    assert h.rel_error < 1e-6


def test_finite_diff_bound_second_derivative_positive():
    p = reference_params(10)
    rng = np.random.default_rng(0)
    for m in rng.uniform(1, 200, 50):
        rep = finite_diff_check(lambda x: float(bound_derivatives(x[0], p)[0]), [m], 1e-3,
                                analytic=[float(bound_derivatives(m, p)[2])], order=2)
        assert rep.numeric[0, 0] > 0
        assert rep.rel_error < 1e-3


def test_finite_diff_rate_hessian():
    rng = np.random.default_rng(1)
    for _ in range(20):
        x, z = rng.uniform(0.05, 1.0, 2)
        c = 10 ** rng.uniform(-1, 2)
        rep = finite_diff_check(lambda v: v[0] * math.log2(1 + c * v[1] / v[0]), [x, z], 1e-4,
                                analytic=verify._rate_hessian(x, z, c), order=2, floor=1e-3)
        assert np.all(np.diag(rep.numeric) <= 1e-6)
        assert rep.rel_error < 1e-3


def test_oracle_suites_pass():
    for chk in (verify.check_riccati_special(), verify.check_bound_closed_form(),
                verify.check_hungarian(30), verify.check_critic_vs_grid(5)):
        assert chk.passed, chk.line()
