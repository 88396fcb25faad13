import numpy as np
import pytest
from hypothesis import given, strategies as st

from pfopt.solver import (FactoredOperator, SolverConfig, SolverProblem, admm_solve, auto_eta,
                          check_psd, cycode_solve, dual_gap, gap_estimate, gmv_closed_form,
                          objective, path_eta, rescale_dual, ridge_closed_form)
from pfopt.sorted_l1 import bh_lambda_sequence, dual_sorted_l1_norm

from conftest import random_pd
from oracles import qp_oracle


def test_problem_validation(rng):
    S = random_pd(rng, 4)
    with pytest.raises(ValueError):
        SolverProblem(S + np.triu(np.ones((4, 4)), 1))
    with pytest.raises(ValueError):
        SolverProblem(S, phi=0.0)
    with pytest.raises(ValueError):
        SolverProblem(S, mu=np.zeros(3))
    with pytest.raises(ValueError):
        SolverProblem(S, penalty=[0.1, 0.2, 0.3, 0.4])
    with pytest.raises(ValueError):
        SolverProblem(np.ones((2, 3)))


def test_config_validation():
    for bad in ({"eta": 0}, {"tol": -1}, {"max_iter": 0}, {"check_every": 0}):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


def test_check_psd_rejects_indefinite():
    with pytest.raises(ValueError):
        check_psd(np.diag([1.0, -0.1]))
    ev = check_psd(np.diag([2.0, 1.0]))
    assert np.allclose(ev, [1.0, 2.0])


def test_gmv_recovery_example(rng):
    S = random_pd(rng, 8)
    # distance to the optimum is bounded by sqrt(2 gap / lambda_min(S))
    sol = admm_solve(SolverProblem(S), SolverConfig(eta=auto_eta(S), tol=1e-13))
    assert sol.converged and sol.gap <= 1e-13
    assert np.max(np.abs(sol.w - gmv_closed_form(S))) <= 1e-6
    assert abs(sol.w.sum() - 1) <= 1e-12


@pytest.mark.parametrize("nonneg", [False, True])
def test_slope_matches_conic_oracle(rng, nonneg):
    for _ in range(5):
        k = int(rng.integers(3, 12))
        S = random_pd(rng, k)
        mu = 0.02 * rng.standard_normal(k)
        lam = bh_lambda_sequence(k, 0.1, float(rng.uniform(0.001, 0.05)))
        prob = SolverProblem(S, mu=mu, penalty=lam, nonneg=nonneg)
        sol = admm_solve(prob, SolverConfig(eta=auto_eta(S), tol=1e-11, max_iter=200_000))
        w_ref, f_ref = qp_oracle(S, mu, lam, nonneg=nonneg)
        assert sol.converged
        assert sol.objective - f_ref <= 1e-9
        assert np.max(np.abs(sol.w - w_ref)) <= 1e-5


def test_gap_certifies_suboptimality(rng):
    k = 10
    S = random_pd(rng, k)
    lam = bh_lambda_sequence(k, 0.1, 0.02)
    prob = SolverProblem(S, penalty=lam)
    _, f_star = qp_oracle(S, lam=lam)
    for iters in (5, 20, 80):
        sol = admm_solve(prob, SolverConfig(eta=auto_eta(S), tol=1e-14, max_iter=iters))
        assert sol.gap >= sol.objective - f_star - 1e-10
        assert sol.gap >= -1e-12


def test_dual_gap_of_solution_matches_reported(rng):
    S = random_pd(rng, 7)
    prob = SolverProblem(S, penalty=bh_lambda_sequence(7, 0.1, 0.03))
    sol = admm_solve(prob, SolverConfig(eta=auto_eta(S), tol=1e-9))
    assert dual_gap(sol, prob) == pytest.approx(sol.gap, rel=1e-6, abs=1e-13)
    op = FactoredOperator(S, 1.0, 2.0)
    assert dual_gap(sol, prob, op) == pytest.approx(sol.gap, rel=1e-6, abs=1e-13)


def test_gap_estimate_examples():
    S = np.eye(3)
    prob = SolverProblem(S)
    w = np.full(3, 1 / 3)
    assert gap_estimate((w, w, np.zeros(3), 0.0), prob) == 0.0
    lam = np.array([0.3, 0.2, 0.1])
    prob = SolverProblem(S, penalty=lam)
    a = np.array([1.0, -2.0, 0.5])
    at = rescale_dual(a, prob)
    assert dual_sorted_l1_norm(at, lam) == pytest.approx(1.0)


def test_rescale_dual_zero_penalty():
    prob = SolverProblem(np.eye(2), nonneg=True)
    assert np.array_equal(rescale_dual([0.5, -0.5], prob), [0.0, -0.5])
    prob = SolverProblem(np.eye(2))
    assert np.array_equal(rescale_dual([0.5, -0.5], prob), [0.0, 0.0])


def test_warm_start_reduces_iterations(rng):
    k = 20
    S = random_pd(rng, k)
    p1 = SolverProblem(S, penalty=bh_lambda_sequence(k, 0.1, 0.010))
    p2 = SolverProblem(S, penalty=bh_lambda_sequence(k, 0.1, 0.011))
    cfg = SolverConfig(eta=auto_eta(S), tol=1e-10)
    first = admm_solve(p1, cfg)
    cold = admm_solve(p2, cfg)
    warm = admm_solve(p2, SolverConfig(cfg.eta, cfg.tol, cfg.max_iter, first.state))
    assert warm.converged and warm.iterations < cold.iterations
    with pytest.raises(ValueError):
        admm_solve(p2, SolverConfig(warm_start=(np.ones(3), np.ones(3), np.ones(3), 0.0)))


def test_nonconvergence_reported(rng):
    S = random_pd(rng, 10, cond=1e4)
    sol = admm_solve(SolverProblem(S, penalty=bh_lambda_sequence(10, 0.1, 0.01)),
                     SolverConfig(tol=1e-14, max_iter=3))
    assert not sol.converged and sol.iterations <= 5


def test_cycode_matches_admm(rng):
    k = 15
    S = random_pd(rng, k)
    for lam in (1e-5, 0.01, 0.2):
        prob = SolverProblem(S, phi=2.0, penalty=np.full(k, lam))
        a = admm_solve(prob, SolverConfig(eta=auto_eta(S, 2.0), tol=1e-11))
        for start in ("ew", "random"):
            c = cycode_solve(prob, SolverConfig(tol=1e-11), start=start, seed=3)
            assert c.converged
            assert abs(c.objective - a.objective) <= 1e-9
            assert np.max(np.abs(c.w - a.w)) <= 1e-5
            assert c.gap <= 1e-7


def test_cycode_rejects_unsupported(rng):
    S = random_pd(rng, 3)
    with pytest.raises(ValueError):
        cycode_solve(SolverProblem(S, penalty=[0.3, 0.2, 0.1]))
    with pytest.raises(ValueError):
        cycode_solve(SolverProblem(S, nonneg=True))
    with pytest.raises(ValueError):
        cycode_solve(SolverProblem(S), start="zeros")


def test_closed_forms_match_oracle(rng):
    S = random_pd(rng, 6)
    w, _ = qp_oracle(S)
    assert np.max(np.abs(gmv_closed_form(S) - w)) <= 1e-7
    lam = 0.05
    import cvxpy as cp
    x = cp.Variable(6)
    cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, S) + lam * cp.sum_squares(x)),
               [cp.sum(x) == 1]).solve(solver=cp.CLARABEL)
    assert np.max(np.abs(ridge_closed_form(S, lam) - x.value)) <= 1e-6
    with pytest.raises(ValueError):
        ridge_closed_form(S, -1.0)
    with pytest.raises(ValueError):
        gmv_closed_form(np.zeros((3, 3)))


def test_path_eta_quantized_and_bounded():
    ev = np.array([1e-6, 0.5, 1.0, 2.0])
    bar = ev.mean()
    vals = [path_eta(l, ev) for l in np.logspace(-9, 1, 50)]
    logs = np.log2(vals) * 2
    assert np.allclose(logs, np.round(logs))
    assert max(vals) <= bar * np.sqrt(2) and min(vals) >= 1e-3 * bar / np.sqrt(2)
    assert np.all(np.diff(vals) >= 0)


@given(st.integers(2, 8), st.integers(0, 10_000), st.floats(0.5, 4.0))
def test_objective_scale_covariance(k, seed, c):
    rng = np.random.default_rng(seed)
    S = random_pd(rng, k)
    mu = 0.01 * rng.standard_normal(k)
    lam = bh_lambda_sequence(k, 0.1, 0.01)
    w = rng.standard_normal(k)
    w /= w.sum() if abs(w.sum()) > 0.1 else 1.0
    f1 = objective(w, SolverProblem(S, mu, penalty=lam))
    f2 = objective(w, SolverProblem(c * S, c * mu, penalty=c * lam))
    assert f2 == pytest.approx(c * f1, rel=1e-10, abs=1e-14)


@given(st.integers(2, 10), st.integers(0, 10_000))
def test_solution_is_budget_feasible_with_small_gap(k, seed):
    rng = np.random.default_rng(seed)
    S = random_pd(rng, k)
    nonneg = bool(seed % 2)
    prob = SolverProblem(S, penalty=bh_lambda_sequence(k, 0.1, 0.02), nonneg=nonneg)
    sol = admm_solve(prob, SolverConfig(eta=auto_eta(S), tol=1e-9))
    assert sol.converged and sol.gap <= 1e-9
    assert abs(sol.w.sum() - 1.0) <= 1e-12
    if nonneg:
        assert sol.w.min() >= 0.0
