import time

import numpy as np
import pytest
import scipy.sparse as sp

from confair.qpsolve import NotPSDError, QpSettings, QpSolution, QuadraticProgram, kkt_residuals, solve
from oracles import active_set_oracle, random_qp


def test_unconstrained_stationary_point():
    sol = solve(QuadraticProgram([[2.0]], [-2.0]))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-9)
    assert sol.objective == pytest.approx(-1.0, abs=1e-9)


def test_clipped_one_dimensional_optimum():
    sol = solve(QuadraticProgram([[2.0]], [-2.0], G=[[1.0]], h=[0.5]))
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(0.5, abs=1e-7)
    assert sol.ineq_multipliers[0] == pytest.approx(1.0, abs=1e-6)


def test_four_variables_box_and_equality_match_oracle():
    rng = np.random.default_rng(4)
    d = random_qp(rng, n=4, p=1, box=True)
    x_ref, f_ref = active_set_oracle(**d)
    sol = solve(QuadraticProgram(**d))
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, x_ref, atol=1e-6)
    assert sol.objective == pytest.approx(f_ref, abs=1e-6)


def test_random_qps_match_active_set_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        d = random_qp(rng, box=bool(rng.integers(2)))
        x_ref, f_ref = active_set_oracle(**d)
        sol = solve(QuadraticProgram(**d))
        assert sol.status == "optimal"
        assert abs(sol.objective - f_ref) <= 1e-6
        assert np.max(np.abs(sol.x - x_ref)) <= 1e-5


def test_sparse_g_gives_the_dense_answer():
    rng = np.random.default_rng(9)
    d = random_qp(rng, n=5, p=1, box=True)
    dense = solve(QuadraticProgram(**d))
    sparse = solve(QuadraticProgram(**{**d, "G": sp.csr_matrix(d["G"])}))
    np.testing.assert_allclose(sparse.x, dense.x, atol=1e-9)


def test_kkt_residuals_small_at_optimum():
    rng = np.random.default_rng(1)
    d = random_qp(rng, n=5, m=8, p=1)
    qp = QuadraticProgram(**d)
    sol = solve(qp)
    assert sol.status == "optimal"
    assert kkt_residuals(qp, sol).max() <= 1e-6


def test_perturbed_solution_breaks_stationarity():
    rng = np.random.default_rng(3)
    d = random_qp(rng, n=4, m=0, p=0)
    qp = QuadraticProgram(**d)
    sol = solve(qp)
    sol.x = sol.x + 0.1
    assert kkt_residuals(qp, sol).stationarity > 0.01


def test_zero_problem_has_zero_residuals():
    qp = QuadraticProgram(np.zeros((2, 2)), np.zeros(2))
    sol = QpSolution(np.zeros(2), np.zeros(0), np.zeros(0), 0.0, 0.0, 0, "optimal")
    assert kkt_residuals(qp, sol).max() == 0.0


def test_duality_gap_shrinks():
    rng = np.random.default_rng(7)
    sol = solve(QuadraticProgram(**random_qp(rng, n=6, m=12, p=2)))
    hist = sol.gap_history
    assert hist[-1] < 1e-8 * max(1.0, abs(sol.objective))
    assert hist[-1] < hist[0]


def test_indefinite_p_is_rejected():
    with pytest.raises(NotPSDError):
        solve(QuadraticProgram([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], G=[[1.0, 0.0]], h=[1.0]))


def test_roundoff_indefinite_p_is_ridged():
    P = np.array([[1.0, 0.0], [0.0, -5e-7]])
    with pytest.warns(UserWarning, match="ridge"):
        sol = solve(QuadraticProgram(P, [-1.0, 0.0], G=np.vstack([-np.eye(2), np.eye(2)]), h=np.ones(4)))
    assert sol.status == "optimal"


def test_infeasible_problem_is_reported():
    # x <= -1 and -x <= -1 (x >= 1) cannot both hold
    sol = solve(QuadraticProgram([[1.0]], [0.0], G=[[1.0], [-1.0]], h=[-1.0, -1.0]))
    assert sol.status == "infeasible"


def test_max_iter_status():
    rng = np.random.default_rng(5)
    sol = solve(QuadraticProgram(**random_qp(rng, n=6, m=12, p=1)), QpSettings(max_iter=1))
    assert sol.status == "max_iter"


def test_shape_validation():
    with pytest.raises(ValueError):
        QuadraticProgram(np.eye(2), np.zeros(3))
    with pytest.raises(ValueError):
        QuadraticProgram([[1.0, 2.0], [0.0, 1.0]], np.zeros(2))
    with pytest.raises(ValueError):
        QuadraticProgram(np.eye(2), np.zeros(2), G=np.ones((1, 2)), h=np.ones(2))


def test_equality_only_problem():
    sol = solve(QuadraticProgram(np.eye(2), np.zeros(2), A=[[1.0, 1.0]], b=[2.0]))
    np.testing.assert_allclose(sol.x, [1.0, 1.0], atol=1e-12)


def test_redundant_equalities_are_tolerated():
    G = np.vstack([-np.eye(2), np.eye(2)])
    qp = QuadraticProgram(np.eye(2), [-1.0, 0.5], G=G, h=np.r_[0, 0, 2, 2.0], A=[[1.0, 1.0], [2.0, 2.0]], b=[1.0, 2.0])
    sol = solve(qp)
    assert sol.status == "optimal"
    np.testing.assert_allclose(sol.x, [1.0, 0.0], atol=1e-7)


def test_contradictory_equalities_are_infeasible():
    G = np.vstack([-np.eye(2), np.eye(2)])
    qp = QuadraticProgram(np.eye(2), [0.0, 0.0], G=G, h=np.r_[0, 0, 2, 2.0], A=[[1.0, 1.0], [1.0, 1.0]], b=[1.0, 2.0])
    assert solve(qp).status == "infeasible"
