import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bentpipe.metrics import antenna_load
from bentpipe.optimizer.subproblems import (
    assemble_amplify_subproblem,
    assemble_matching_subproblem,
    assemble_precoding_subproblem,
    check_matching,
    coefficients,
    log_count,
    matching_quadratic,
    rate_scale,
    reweight,
    selection_matrix,
    unvec,
    vec,
    weighted_mse_objective,
)
from bentpipe.optimizer.wmmse import wmmse_update
from helpers import crandn, random_design, toy_instance


def _setup(seed, N=3, K=2, eta=0.3):
    inst = toy_instance(seed, N=N, K=K)
    rng = np.random.default_rng(seed + 1000)
    W, B = random_design(rng, N, K)
    wm = wmmse_update(W, B, inst.F, inst.H, inst.power.noise_cov_sat, inst.power.noise_user)
    return inst, rng, W, B, wm, coefficients(eta, inst.power)


def _J(inst, W, B, wm, eta, count):
    return weighted_mse_objective(W, B, inst.F, inst.H, inst.power, wm.delta, wm.omega, eta, count)


def test_coefficient_identities():
    inst = toy_instance(0)
    p = inst.power
    eta = 2.5
    c = coefficients(eta, p)
    scale = eta * math.log(2.0) / p.baud_rate
    assert c.nu_hw == pytest.approx(scale * (p.delta_gw * p.gw_hw_power + p.delta_sa * p.sat_hw_power))
    assert c.nu1 == pytest.approx(scale * p.delta_gw * (p.rho_gw + 1) / p.rho_gw)
    assert c.nu2 == pytest.approx(scale * p.delta_sa / p.rho_sa)
    assert c.nu3 == pytest.approx((p.rho_sa + 1) * c.nu2)
    assert rate_scale(p) == pytest.approx(p.baud_rate / math.log(2.0))


def test_zero_eta_gives_zero_power_coefficients():
    c = coefficients(0.0, toy_instance(1).power)
    assert (c.nu_hw, c.nu1, c.nu2, c.nu3) == (0.0, 0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        coefficients(-1.0, toy_instance(1).power)


@pytest.mark.parametrize("seed", range(6))
def test_precoding_objective_difference_matches_J_when_pi_is_psd(seed):
    inst, rng, W, B, wm, coeffs = _setup(seed, eta=0.0)
    sub = assemble_precoding_subproblem(
        W, B, inst.F, inst.H, inst.power, wm.delta, wm.omega, coeffs, inst.gw_budget, inst.sat_budget
    )
    assert sub.pi_clamp <= 1e-12 * np.abs(sub.problem.P).max()
    W2 = W + 0.3 * crandn(rng, *W.shape)
    dJ = _J(inst, W2, B, wm, 0.0, 2) - _J(inst, W, B, wm, 0.0, 2)
    dq = sub.problem.objective(W2) - sub.problem.objective(W)
    assert dJ == pytest.approx(dq, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("seed", range(6))
def test_precoding_objective_with_power_terms(seed):
    inst, rng, W, B, wm, _ = _setup(seed)
    eta = 0.05
    coeffs = coefficients(eta, inst.power)
    sub = assemble_precoding_subproblem(
        W, B, inst.F, inst.H, inst.power, wm.delta, wm.omega, coeffs, inst.gw_budget, inst.sat_budget
    )
    W2 = W + 0.3 * crandn(rng, *W.shape)
    dJ = _J(inst, W2, B, wm, eta, 3) - _J(inst, W, B, wm, eta, 3)
    dq = sub.problem.objective(W2) - sub.problem.objective(W)
    if sub.pi_clamp <= 1e-12 * np.abs(sub.problem.P).max():
        assert dJ == pytest.approx(dq, rel=1e-9, abs=1e-12)
    else:
        assert dJ <= dq + 1e-12 * max(1.0, abs(dq))


def test_negative_pi_is_majorized_at_the_current_point():
    inst, rng, W, B, wm, _ = _setup(3)
    inst = replace(inst, F=40.0 * inst.F)  # strong feeder links, tiny gains:
    B = 1e-3 * B  # the satellite-input credit dominates Pi
    eta = 1e4
    coeffs = coefficients(eta, inst.power)
    sub = assemble_precoding_subproblem(
        W, B, inst.F, inst.H, inst.power, wm.delta, wm.omega, coeffs, inst.gw_budget, inst.sat_budget
    )
    assert sub.pi_clamp > 0
    J0, q0 = _J(inst, W, B, wm, eta, 3), sub.problem.objective(W)
    for _ in range(20):
        W2 = W + crandn(rng, *W.shape)
        assert _J(inst, W2, B, wm, eta, 3) - J0 <= sub.problem.objective(W2) - q0 + 1e-9


def test_precoding_constraints_are_budgets():
    inst, rng, W, B, wm, coeffs = _setup(4)
    sub = assemble_precoding_subproblem(
        W, B, inst.F, inst.H, inst.power, wm.delta, wm.omega, coeffs, inst.gw_budget, inst.sat_budget
    )
    vals = sub.problem.constraint_values(W)
    N = inst.N
    np.testing.assert_allclose(vals[:N], np.sum(np.abs(W) ** 2, axis=1))
    noise = (B**2) @ inst.power.noise_cov_sat
    np.testing.assert_allclose(vals[N:] + noise, antenna_load(W, B, inst.F, inst.power.noise_cov_sat))
    np.testing.assert_allclose(sub.problem.bounds()[N:] + noise, inst.sat_budget)


def test_precoding_rows_restrict_variables():
    inst, rng, W, B, wm, coeffs = _setup(5)
    sub = assemble_precoding_subproblem(
        W, B, inst.F, inst.H, inst.power, wm.delta, wm.omega, coeffs, inst.gw_budget, inst.sat_budget, rows=[0, 2]
    )
    assert sub.problem.dim == 2
    W2 = W.copy()
    W2[1] = 0.0
    W3 = W2 + 0.1 * np.vstack([crandn(rng, 1, 2), np.zeros((1, 2)), crandn(rng, 1, 2)])
    dJ = _J(inst, W3, B, wm, 0.3, 2) - _J(inst, W2, B, wm, 0.3, 2)
    dq = sub.problem.objective(W3[[0, 2]]) - sub.problem.objective(W2[[0, 2]])
    assert dJ <= dq + 1e-12 or dJ == pytest.approx(dq, rel=1e-9)
    with pytest.raises(ValueError):
        assemble_precoding_subproblem(
            W, B[:2, :2], inst.F, inst.H, inst.power, wm.delta, wm.omega, coeffs, inst.gw_budget, inst.sat_budget
        )


@pytest.mark.parametrize("seed", range(6))
def test_matching_objective_difference_matches_J(seed):
    inst, rng, W, B, wm, coeffs = _setup(seed)
    beta = reweight(B, 0.1)
    prob = assemble_matching_subproblem(W, inst.F, inst.H, inst.power, wm.delta, wm.omega, beta, coeffs, inst.sat_budget)
    B2 = rng.uniform(0.0, 1.5, size=B.shape)
    count = lambda X: float(np.sum(beta**2 * X**2))
    dJ = _J(inst, W, B2, wm, 0.3, count(B2)) - _J(inst, W, B, wm, 0.3, count(B))
    dq = prob.objective(vec(B2)) - prob.objective(vec(B))
    assert dJ == pytest.approx(dq, rel=1e-9, abs=1e-12)


def test_matching_quadratic_is_psd():
    inst, rng, W, B, wm, coeffs = _setup(2)
    Q, _ = matching_quadratic(W, inst.F, inst.H, inst.power, wm.delta, wm.omega, coeffs)
    assert np.linalg.eigvalsh(Q).min() >= -1e-12 * np.abs(Q).max()


def test_matching_constraints_and_incumbent_lift():
    inst, rng, W, B, wm, coeffs = _setup(6)
    beta = reweight(B, 0.1)
    N = inst.N
    prob = assemble_matching_subproblem(W, inst.F, inst.H, inst.power, wm.delta, wm.omega, beta, coeffs, inst.sat_budget)
    vals = prob.constraint_values(vec(B))
    np.testing.assert_allclose(vals[:N], np.sum(beta**2 * B**2, axis=0))
    np.testing.assert_allclose(vals[N : 2 * N], np.sum(beta**2 * B**2, axis=1))
    np.testing.assert_allclose(vals[2 * N :], antenna_load(W, B, inst.F, inst.power.noise_cov_sat))
    big = 5.0 * B
    lifted = assemble_matching_subproblem(
        W, inst.F, inst.H, inst.power, wm.delta, wm.omega, beta, coeffs, inst.sat_budget, incumbent=big
    )
    cv, bd = lifted.constraint_values(vec(big)), lifted.bounds()
    assert np.all(cv[: 2 * N] <= bd[: 2 * N] * (1 + 1e-12))
    assert np.all(bd[: 2 * N] >= 1.0)


@pytest.mark.parametrize("seed", range(4))
def test_amplify_objective_difference_matches_J(seed):
    inst, rng, W, _, wm, coeffs = _setup(seed)
    A = np.eye(inst.N)[rng.permutation(inst.N)]
    A[0] = 0.0
    alpha = rng.uniform(0.1, 2.0, size=inst.N)
    sub = assemble_amplify_subproblem(A, W, inst.F, inst.H, inst.power, wm.delta, wm.omega, alpha, coeffs, inst.sat_budget)
    assert list(sub.beams) == [1, 2]
    xi1, xi2 = rng.uniform(0, 1, inst.N), rng.uniform(0, 1, inst.N)
    xi1[0] = xi2[0] = 0.0
    B1, B2 = xi1[:, None] * A, xi2[:, None] * A
    count = lambda xi: float(np.sum(alpha**2 * xi**2))
    dJ = _J(inst, W, B2, wm, 0.3, count(xi2)) - _J(inst, W, B1, wm, 0.3, count(xi1))
    dq = sub.problem.objective(xi2[sub.beams]) - sub.problem.objective(xi1[sub.beams])
    assert dJ == pytest.approx(dq, rel=1e-9, abs=1e-12)
    loads = sub.problem.constraint_values(xi2[sub.beams])
    np.testing.assert_allclose(loads, antenna_load(W, B2, inst.F, inst.power.noise_cov_sat)[sub.beams])


def test_vec_is_column_major():
    B = np.arange(9.0).reshape(3, 3)
    b = vec(B)
    for n in range(3):
        for t in range(3):
            assert b[t * 3 + n] == B[n, t]
    np.testing.assert_array_equal(unvec(b, 3), B)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), N=st.integers(1, 5))
def test_selection_matrix_maps_gains(seed, N):
    rng = np.random.default_rng(seed)
    A = np.eye(N)[rng.permutation(N)]
    A[rng.random(N) < 0.3] = 0.0
    xi = rng.uniform(size=N)
    np.testing.assert_allclose(selection_matrix(A) @ xi, vec(xi[:, None] * A))


def test_check_matching_rejects_bad_input():
    with pytest.raises(ValueError):
        check_matching(np.ones((2, 3)))
    with pytest.raises(ValueError):
        check_matching(np.array([[0.5, 0], [0, 1]]))
    with pytest.raises(ValueError):
        check_matching(np.array([[1, 1], [0, 0]]))


@settings(max_examples=50, deadline=None)
@given(
    x0=st.lists(st.floats(0, 10), min_size=1, max_size=6),
    x1=st.lists(st.floats(0, 10), min_size=1, max_size=6),
    eps=st.floats(1e-4, 1.0),
    unit=st.floats(0.1, 10.0),
)
def test_reweighted_quadratic_majorizes_log_count(x0, x1, eps, unit):
    n = min(len(x0), len(x1))
    a, b = np.array(x0[:n]), np.array(x1[:n])
    beta = reweight(a, eps, unit)
    bound = log_count(a, eps, unit) + np.sum(beta**2 * (b**2 - a**2))
    assert log_count(b, eps, unit) <= bound + 1e-9 * max(1.0, abs(bound))
