import math

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scatter_cs.errors import DegenerateMatrixError, DomainError, InfeasibleError
from scatter_cs.forward import PlaneWave, PointSource, foldy_lax_solve, gv_norm, target_vector
from scatter_cs.recover import (RESULT_CSV_FIELDS, TROPP_CONST, basis_pursuit, bpdn, brute_force_l0,
                                default_threshold, invert_strengths, invert_strengths_nearfield,
                                lasso_objective, omp, recovery_metrics, result_csv_row,
                                soft_threshold, stability_bounds, support_of)
from scatter_cs.scene import AngleDensity, Lattice, Target, draw_angles, draw_target, plane_direction
from scatter_cs.sensing import build_mimo_born, build_simo_farfield, coherence
from scatter_cs.specfun import green


def cgauss(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def sparse_vector(rng, m, s):
    x = np.zeros(m, complex)
    idx = rng.choice(m, s, replace=False)
    x[idx] = np.exp(2j * np.pi * rng.uniform(size=s)) * rng.uniform(0.5, 2, s)
    return x


def mimo(lat, n, p, omega, rng):
    f = AngleDensity.uniform()
    return build_mimo_born(lat, draw_angles(n, f, rng), draw_angles(p, f, rng), omega).entries


def dual_ok(A, x, w, tol):
    c = A.conj().T @ w
    on = np.abs(x) > default_threshold(x)
    return np.max(np.abs(c)) <= 1 + tol and np.allclose(c[on], x[on] / np.abs(x[on]), atol=1e-6)


# helpers ------------------------------------------------------------------

def test_soft_threshold_preserves_phase():
    v = np.array([3 * np.exp(0.7j), 0.5j, -2.0])
    out = soft_threshold(v, 1.0)
    assert np.allclose(out, [2 * np.exp(0.7j), 0, -1.0])


def test_support_of_default_threshold():
    x = np.array([1.0, 1e-7, 0.5e-6, 2e-6])
    assert support_of(x) == (0, 3)
    assert support_of(np.zeros(3)) == ()


# OMP ----------------------------------------------------------------------

def test_omp_orthogonal_single_atom():
    Q, _ = np.linalg.qr(cgauss(np.random.default_rng(0), 6, 6))
    y = Q[:, 3] * (2 + 1j)
    res = omp(Q, y, 3)
    assert res.support_hat == (3,)
    assert res.x_hat[3] == pytest.approx(2 + 1j, abs=1e-14)
    assert res.iterations == 1


def test_omp_zero_data():
    res = omp(np.eye(4), np.zeros(4), 2)
    assert np.all(res.x_hat == 0) and res.iterations == 0


def test_omp_rank_deficient_refit():
    # with tol = 0 the loop keeps adding atoms past the row count
    rng = np.random.default_rng(0)
    with pytest.raises(DegenerateMatrixError):
        omp(cgauss(rng, 2, 3), cgauss(rng, 2), 3, tol=0.0)


def test_omp_exact_under_coherence_condition():
    lat = Lattice(1.0, 6)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        A = mimo(lat, 8, 8, 20.0, rng)
        s = int(0.5 * (1 + 1 / coherence(A)))
        if s < 1:
            continue
        x = sparse_vector(rng, lat.m, s)
        res = omp(A, A @ x, s)
        assert set(res.support_hat) == set(np.flatnonzero(x))
        assert res.iterations == s
        assert np.max(np.abs(res.x_hat - x)) <= 1e-10 * np.max(np.abs(x))


# basis pursuit ------------------------------------------------------------

def test_bp_identity():
    y = np.array([1 + 2j, 0, -3, 0.5j])
    res = basis_pursuit(np.eye(4), y)
    assert np.allclose(res.x_hat, y, atol=1e-8)


def test_bp_one_by_two_tie():
    res = basis_pursuit(np.array([[1.0, 1.0]]), np.array([1.0]))
    assert np.sum(np.abs(res.x_hat)) == pytest.approx(1.0, abs=1e-8)
    assert abs(res.x_hat.sum() - 1) <= 1e-8


def test_bp_infeasible():
    A = np.array([[1.0, 0.0], [1.0, 0.0]])
    with pytest.raises(InfeasibleError):
        basis_pursuit(A, np.array([1.0, -1.0]))


def test_bp_exact_under_coherence_condition_and_certificate():
    lat = Lattice(1.0, 6)
    for seed in range(10):
        rng = np.random.default_rng(seed)
        A = mimo(lat, 8, 8, 20.0, rng)
        s = max(1, int(0.5 * (1 + 1 / coherence(A))))
        x = sparse_vector(rng, lat.m, s)
        res = basis_pursuit(A, A @ x)
        assert np.max(np.abs(res.x_hat - x)) <= 1e-6 * np.max(np.abs(x))
        assert dual_ok(A, res.x_hat, res.info["dual"], 10 * 1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_bp_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    A = cgauss(rng, 8, 20)
    x0 = sparse_vector(rng, 20, 5)
    y = A @ x0
    res = basis_pursuit(A, y)
    z = cp.Variable(20, complex=True)
    prob = cp.Problem(cp.Minimize(cp.norm1(z)), [A @ z == y])
    prob.solve()
    assert np.linalg.norm(A @ res.x_hat - y) <= 1e-8 * np.linalg.norm(y) * (1 + 1e-6)
    assert np.sum(np.abs(res.x_hat)) <= prob.value * (1 + 1e-6)
    assert dual_ok(A, res.x_hat, res.info["dual"], 1e-9)


# BPDN ---------------------------------------------------------------------

def test_bpdn_large_lambda_gives_zero():
    rng = np.random.default_rng(1)
    A, y = cgauss(rng, 6, 10), cgauss(rng, 6)
    lam = np.max(np.abs(A.conj().T @ y))
    res = bpdn(A, y, lam * 1.0000001)
    assert np.all(res.x_hat == 0)
    base = lasso_objective(A, y, res.x_hat, lam)
    for _ in range(20):
        d = 1e-4 * cgauss(rng, 10)
        assert lasso_objective(A, y, d, lam) >= base - 1e-15


def test_bpdn_small_lambda_inverts_square_system():
    rng = np.random.default_rng(2)
    A = cgauss(rng, 5, 5) + 5 * np.eye(5)
    y = cgauss(rng, 5)
    res = bpdn(A, y, 1e-10)
    assert np.allclose(res.x_hat, np.linalg.solve(A, y), atol=1e-8)


def test_bpdn_rejects_nonpositive_lambda():
    with pytest.raises(DomainError):
        bpdn(np.eye(2), np.ones(2), 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_bpdn_matches_cvxpy_and_beats_truth(seed):
    rng = np.random.default_rng(seed)
    A = cgauss(rng, 12, 25)
    x0 = sparse_vector(rng, 25, 4)
    y = A @ x0 + 0.05 * cgauss(rng, 12)
    lam = 0.5
    res = bpdn(A, y, lam)
    z = cp.Variable(25, complex=True)
    prob = cp.Problem(cp.Minimize(0.5 * cp.sum_squares(A @ z - y) + lam * cp.norm1(z)))
    prob.solve()
    ours = lasso_objective(A, y, res.x_hat, lam)
    assert ours <= prob.value + 1e-6 * max(1, prob.value)
    assert ours <= lasso_objective(A, y, x0, lam) + 10 * 1e-12


def test_bpdn_noisy_recovery_bound():
    # SIMO matrix with many sensors so that mu s <= 1/3 holds for s = 2
    lat = Lattice(1.0, 4)
    n, eps = 800, 1e-3
    found = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        A = build_simo_farfield(lat, draw_angles(n, AngleDensity.uniform(), rng), 100.0).entries
        if coherence(A) * 2 > 1 / 3:
            continue
        found += 1
        x = sparse_vector(rng, lat.m, 2)
        e = cgauss(rng, n)
        e *= eps * math.sqrt(n) / np.linalg.norm(e)
        res = bpdn(A, A @ x + e, 2 * eps * n)
        assert set(support_of(res.x_hat)) <= set(np.flatnonzero(x))
        assert np.max(np.abs(res.x_hat - x)) <= TROPP_CONST * eps
    assert found > 0


# brute force --------------------------------------------------------------

def test_l0_single_column():
    rng = np.random.default_rng(3)
    A = cgauss(rng, 5, 8)
    res = brute_force_l0(A, 5 * A[:, 2], 2)
    assert res.support_hat == (2,)


def test_l0_guards_and_infeasible():
    rng = np.random.default_rng(4)
    with pytest.raises(DomainError):
        brute_force_l0(np.ones((3, 25)), np.ones(3), 1)
    with pytest.raises(DomainError):
        brute_force_l0(np.ones((3, 10)), np.ones(3), 5)
    with pytest.raises(InfeasibleError):
        brute_force_l0(cgauss(rng, 6, 10), cgauss(rng, 6), 1, tol=1e-10)


def test_l0_two_sparse_matches_bp():
    rng = np.random.default_rng(5)
    A = cgauss(rng, 8, 10)
    x = sparse_vector(rng, 10, 2)
    l0 = brute_force_l0(A, A @ x, 3)
    assert set(l0.support_hat) == set(np.flatnonzero(x))
    if 2 <= 0.5 * (1 + 1 / coherence(A)):
        assert support_of(basis_pursuit(A, A @ x).x_hat) == l0.support_hat


def test_omp_matches_l0_under_spark_condition():
    lat = Lattice(1.0, 4)
    checked = 0
    for seed in range(30):
        rng = np.random.default_rng(seed)
        A = mimo(lat, 6, 6, 20.0, rng)
        smax = min(3, int(0.5 * (1 + 1 / coherence(A))))
        if smax < 1:
            continue
        x = sparse_vector(rng, lat.m, int(rng.integers(1, smax + 1)))
        assert omp(A, A @ x, smax).support_hat == brute_force_l0(A, A @ x, smax).support_hat
        checked += 1
    assert checked > 0


# strength inversion -------------------------------------------------------

def test_invert_single_site():
    lat = Lattice(1.0, 3)
    inc = PlaneWave(plane_direction(0.4))
    x = np.zeros(9, complex)
    x[5] = 0.3 - 0.2j
    est = invert_strengths(x, lat, 4.0, inc)
    assert est.nu_hat[5] == pytest.approx(x[5] / inc(lat.points[5:6], 4.0)[0], rel=1e-15)
    assert est.support == (5,) and est.well_defined


def test_invert_zero_vector():
    lat = Lattice(1.0, 3)
    est = invert_strengths_nearfield(np.zeros(9), lat, 2.0, [0.0, -2.0])
    assert np.all(est.nu_hat == 0) and est.well_defined


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.floats(1, 40), st.integers(0, 2 ** 32), st.floats(0.05, 0.49),
       st.floats(-np.pi, np.pi))
def test_forward_then_invert_is_identity(s, omega, seed, margin, angle):
    lat = Lattice(1.0, 5)
    t = draw_target(lat, s, seed=seed)
    t = t.scaled(margin / gv_norm(t, lat, omega)) if gv_norm(t, lat, omega) > 0 else t
    inc = PlaneWave(plane_direction(angle))
    U = foldy_lax_solve(t, lat, inc, omega)
    est = invert_strengths(target_vector(t, U), lat, omega, inc)
    assert est.well_defined
    assert np.max(np.abs(est.nu_hat - t.nu)) <= 1e-12 * np.max(np.abs(t.nu))


def test_nearfield_single_site_and_pipeline():
    lat = Lattice(1.0, 4)
    r0 = np.array([1.5, -3.0])
    x = np.zeros(16, complex)
    x[6] = 0.2j
    est = invert_strengths_nearfield(x, lat, 3.0, r0)
    assert est.nu_hat[6] == pytest.approx(0.2j / green(lat.points[6] - r0, 3.0, 2), rel=1e-14)
    for seed in range(5):
        t = draw_target(lat, 3, seed=seed)
        t = t.scaled(0.3 / gv_norm(t, lat, 3.0))
        src = PointSource(r0, lat.spacing)
        U = foldy_lax_solve(t, lat, src, 3.0)
        est = invert_strengths_nearfield(target_vector(t, U), lat, 3.0, r0)
        assert np.max(np.abs(est.nu_hat - t.nu)) <= 1e-10 * np.max(np.abs(t.nu))


def test_invert_flags_zero_denominator():
    lat = Lattice(1.0, 2)
    zero = lambda pts, w: np.zeros(len(pts), complex)
    x = np.array([0.1, 0, 0, 0], complex)
    est = invert_strengths(x, lat, 1.0, zero)
    assert not est.well_defined


# stability ----------------------------------------------------------------

def test_stability_weak_limit():
    lat = Lattice(1.0, 4)
    t = Target.from_support(16, [1, 7], [1e-14, 1e-14j])
    eps = 1e-9
    rep = stability_bounds(t, lat, 5.0, eps)
    assert rep.b0 == pytest.approx(1.0, abs=1e-10)
    assert rep.cond_denominator and not rep.cond_support   # V^-1 is huge
    # with ||V|| -> 0 the bound is 2c / (1 - w^2 c ||G||), i.e. 2c to first order in eps
    c = TROPP_CONST * eps
    assert rep.error_bound == pytest.approx(2 * c / (1 - 25.0 * c * rep.g_norm), rel=1e-10)
    assert rep.error_bound == pytest.approx(2 * c, rel=1e-6)


def test_stability_single_site():
    rep = stability_bounds(Target.from_support(9, [4], [0.5]), Lattice(1.0, 3), 10.0, 1e-4)
    assert rep.gv_norm == 0 and rep.b0 == 1.0
    assert rep.cond_denominator and rep.cond_support


def test_stability_violations():
    lat = Lattice(1.0, 4)
    strong = draw_target(lat, 4, seed=1)
    strong = strong.scaled(0.6 / gv_norm(strong, lat, 5.0))
    rep = stability_bounds(strong, lat, 5.0, 1e-3)
    assert not rep.defined and not rep.cond_denominator and rep.error_bound is None
    weak = draw_target(lat, 4, seed=1).scaled(0.01)
    rep = stability_bounds(weak, lat, 5.0, 1.0)
    assert not rep.cond_denominator and rep.error_bound is None
    with pytest.raises(DomainError):
        stability_bounds(Target(np.zeros(16, complex)), lat, 5.0, 1e-3)


# metrics ------------------------------------------------------------------

def test_metrics_examples():
    x = np.array([0, 1 + 1j, 0, -2.0])
    m = recovery_metrics(x, x)
    assert m.linf == 0 and m.l2 == 0 and m.exact_support and m.contained
    m = recovery_metrics(np.zeros(4), x)
    assert m.contained and not m.exact_support and m.false_negatives == 2 and m.false_positives == 0
    y = x.copy()
    y[1] += 1e-3
    assert recovery_metrics(y, x).linf == pytest.approx(1e-3, rel=1e-10)
    with pytest.raises(DomainError):
        recovery_metrics(np.zeros(3), x)


def test_result_csv_row():
    A = np.eye(3)
    res = omp(A, np.array([1.0, 0, 0]), 1)
    row = result_csv_row(7, 1, 3, 1, 20.0, 0.0, res, recovery_metrics(res.x_hat, res.x_hat))
    assert tuple(row) == RESULT_CSV_FIELDS
    assert row["trial"] == 7 and row["exact_support"] == 1 and row["omega"] == "20.0"
