import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sc3loop.control import (ControlDomainError, ControlSystem, LoopCostParams, NearBoundary,
                             RiccatiDegenerate, RiccatiIterationLimit, UnstableLoop,
                             bound_derivatives, bound_or_inf, cner,
                             gaussian_negentropy_scale, intrinsic_entropy, is_stable,
                             lqr_lower_bound, riccati_residuals, solve_riccati)

TABLE1 = LoopCostParams(entropy=10.0, n=100, negentropy_scale=0.01, det_M_root=1.0,
                        trace_term=1.0)


def test_intrinsic_entropy_examples():
    assert intrinsic_entropy(np.eye(3)) == 0.0
    assert intrinsic_entropy(np.diag([2, 1.2, 0.3])) == pytest.approx(math.log2(0.72), abs=1e-12)
    assert intrinsic_entropy(np.diag([2, 1.2, 0.3])) == pytest.approx(-0.4739, abs=1e-4)


def test_intrinsic_entropy_singular():
    with pytest.raises(ControlDomainError):
        intrinsic_entropy(np.diag([1.0, 0.0]))


@pytest.mark.parametrize("e", [10, 100, 60, 40])
def test_isotropic_plant_has_requested_entropy(e):
    sys_ = ControlSystem.isotropic(e, 100)
    assert intrinsic_entropy(sys_.A) == pytest.approx(e, abs=1e-9)


def test_negentropy_scale_examples():
    for n in (1, 3, 7):
        assert gaussian_negentropy_scale(np.eye(n), n) == pytest.approx(1.0)
    assert gaussian_negentropy_scale(0.01 * np.eye(100), 100) == pytest.approx(0.01, rel=1e-12)
    assert gaussian_negentropy_scale(np.diag([4.0, 1.0]), 2) == pytest.approx(2.0)


def test_negentropy_scale_rejects_indefinite():
    with pytest.raises(ControlDomainError):
        gaussian_negentropy_scale(np.diag([1.0, -1.0]), 2)


@settings(max_examples=30, deadline=None)
@given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 2**16))
def test_negentropy_scale_homogeneous(c, seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(3, 3))
    cov = L @ L.T + 0.5 * np.eye(3)
    assert gaussian_negentropy_scale(c * cov, 3) == pytest.approx(
        c * gaussian_negentropy_scale(cov, 3), rel=1e-10)


def test_control_system_validation():
    with pytest.raises(ControlDomainError):
        ControlSystem(A=np.eye(2), B=np.eye(2), Q=np.array([[1, 2], [0, 1]]), R=np.zeros((2, 2)),
                      noise_cov=np.eye(2))
    with pytest.raises(ControlDomainError):
        ControlSystem(A=np.eye(2), B=np.eye(2), Q=np.eye(2), R=np.zeros((2, 2)),
                      noise_cov=np.zeros((2, 2)))


def test_riccati_identity_case():
    sys_ = ControlSystem(A=2 * np.eye(4), B=np.eye(4), Q=np.eye(4), R=np.zeros((4, 4)),
                         noise_cov=np.eye(4))
    sol = solve_riccati(sys_)
    assert np.abs(sol.S - np.eye(4)).max() <= 1e-12
    assert np.abs(sol.M - np.eye(4)).max() <= 1e-12


def test_riccati_state_cost_only_with_invertible_b():
    rng = np.random.default_rng(3)
    L = rng.normal(size=(5, 5))
    Q = L @ L.T
    B = rng.normal(size=(5, 5)) + 3 * np.eye(5)
    sys_ = ControlSystem(A=rng.normal(size=(5, 5)), B=B, Q=Q, R=np.zeros((5, 5)),
                         noise_cov=np.eye(5))
    sol = solve_riccati(sys_, tol=1e-10)
    assert np.abs(sol.S - Q).max() <= 1e-9
    assert np.abs(sol.M - Q).max() <= 1e-9


def _scalar_fixed_point(a, b, q, r):
    s = q
    for _ in range(10_000):
        s_new = q + a * a * (s - s * b * b * s / (r + b * b * s))
        if abs(s_new - s) < 1e-15 * max(1, s):
            break
        s = s_new
    return s_new, s_new * b * b * s_new / (r + b * b * s_new)


def test_riccati_scalar_against_scan():
    sys_ = ControlSystem(A=[[2.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], noise_cov=[[1.0]])
    sol = solve_riccati(sys_, tol=1e-12)
    s, m = _scalar_fixed_point(2.0, 1.0, 1.0, 1.0)
    assert sol.S[0, 0] == pytest.approx(s, rel=1e-10)
    assert sol.M[0, 0] == pytest.approx(m, rel=1e-10)
    # closed form of the scalar DARE: s^2 - 4 s - 1 = 0
    assert sol.S[0, 0] == pytest.approx(2 + math.sqrt(5), rel=1e-10)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**16))
def test_riccati_residuals_within_tolerance(seed):
    rng = np.random.default_rng(seed)
    n, m = 3, 2
    L = rng.normal(size=(n, n))
    sys_ = ControlSystem(A=rng.normal(size=(n, n)), B=rng.normal(size=(n, m)),
                         Q=L @ L.T + 0.1 * np.eye(n), R=np.eye(m), noise_cov=np.eye(n))
    try:
        sol = solve_riccati(sys_, tol=1e-9, max_iter=20_000)
    except RiccatiIterationLimit:
        return    # unstabilizable draws are allowed to diverge
    res_s, res_m = riccati_residuals(sys_, sol.S, sol.M)
    assert res_s <= 1e-9 * max(1.0, np.abs(sol.S).max()) * 10
    assert res_m <= 1e-9 * max(1.0, np.abs(sol.S).max()) * 10
    assert np.linalg.eigvalsh(sol.S).min() >= -1e-9
    assert np.linalg.eigvalsh(sol.M).min() >= -1e-9


def test_riccati_errors():
    sys_ = ControlSystem(A=[[2.0]], B=[[1.0]], Q=[[1.0]], R=[[1.0]], noise_cov=[[1.0]])
    with pytest.raises(RiccatiIterationLimit):
        solve_riccati(sys_, tol=1e-14, max_iter=2)
    degenerate = ControlSystem(A=[[2.0]], B=[[1.0]], Q=[[0.0]], R=[[0.0]], noise_cov=[[1.0]])
    with pytest.raises(RiccatiDegenerate):
        solve_riccati(degenerate)


def test_cner_examples():
    assert cner(10000, 50, 0.01) == 50
    assert cner(4000, 50, 0.01) == 40
    assert cner(7, 7, 1.0) == 7
    with pytest.raises(ControlDomainError):
        cner(-1, 1, 0.5)


@settings(max_examples=50, deadline=None)
@given(u=st.floats(0, 1e6), d=st.floats(0, 1e6), rho=st.floats(0, 1), du=st.floats(0, 1e3),
       dr=st.floats(0, 1))
def test_cner_monotone(u, d, rho, du, dr):
    base = cner(u, d, rho)
    assert cner(u + du, d, rho) >= base
    assert cner(u, d + du, rho) >= base
    assert cner(u, d, min(1.0, rho + dr)) >= base


def test_is_stable_examples():
    assert not is_stable(10, 10)
    assert is_stable(10.5, 10)
    assert not is_stable(50, 100)


def test_bound_closed_form():
    assert abs(lqr_lower_bound(60, TABLE1) - 2.0) <= 1e-12
    assert abs(lqr_lower_bound(110, TABLE1) - 4 / 3) <= 1e-12
    assert lqr_lower_bound(1e9, TABLE1) == pytest.approx(TABLE1.trace_term, abs=1e-12)
    assert lqr_lower_bound(math.inf, TABLE1) == TABLE1.trace_term


def test_bound_unstable_and_near_boundary():
    with pytest.raises(UnstableLoop):
        lqr_lower_bound(10, TABLE1)
    with pytest.raises(NearBoundary):
        lqr_lower_bound(10 + 1e-12, TABLE1)
    assert bound_or_inf(5, TABLE1) == math.inf
    assert bound_or_inf(10 + 1e-12, TABLE1) == math.inf


@settings(max_examples=100, deadline=None)
@given(d1=st.floats(1e-6, 500), gap=st.floats(1e-3, 500))
def test_bound_strictly_decreasing(d1, gap):
    a = lqr_lower_bound(TABLE1.entropy + d1, TABLE1)
    b = lqr_lower_bound(TABLE1.entropy + d1 + gap, TABLE1)
    assert b < a or (a - TABLE1.trace_term) < 1e-300


def test_bound_convex_by_second_difference():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        m = rng.uniform(0.5, 300)
        h = 1e-3 * m
        f = [lqr_lower_bound(TABLE1.entropy + m + s * h, TABLE1) for s in (-1, 0, 1)]
        assert f[0] - 2 * f[1] + f[2] > 0


def test_bound_derivatives_match_finite_differences():
    m = np.array([0.7, 5.0, 40.0, 200.0])
    v, d1, d2 = bound_derivatives(m, TABLE1)
    h = 1e-4
    fp, _, _ = bound_derivatives(m + h, TABLE1)
    fm, _, _ = bound_derivatives(m - h, TABLE1)
    np.testing.assert_allclose(v, [lqr_lower_bound(10 + x, TABLE1) for x in m], rtol=1e-12)
    np.testing.assert_allclose(d1, (fp - fm) / (2 * h), rtol=1e-6)
    np.testing.assert_allclose(d2, (fp - 2 * v + fm) / h ** 2, rtol=1e-3)


def test_loop_params_from_isotropic_system():
    p = LoopCostParams.from_system(ControlSystem.isotropic(10, 100, noise_variance=0.01))
    assert p.entropy == pytest.approx(10, abs=1e-9)
    assert p.negentropy_scale == pytest.approx(0.01)
    assert p.det_M_root == pytest.approx(1.0, abs=1e-9)
    assert p.trace_term == pytest.approx(1.0, abs=1e-9)
    assert lqr_lower_bound(60, p) == pytest.approx(2.0, abs=1e-9)
