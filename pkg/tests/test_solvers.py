import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import DimensionMismatchError, InvalidConfigError, InvalidInstanceError
from solvers import (
    LinearProgram,
    QuadraticProgram,
    SolveStatus,
    dual_objective,
    independent_rows,
    kkt_residuals,
    minimize_penalized,
    solve_lp,
    solve_qp,
)


def _box_lp():
    # max x + y  s.t.  x + 2y <= 4, 3x + y <= 6, x, y >= 0
    return LinearProgram(c=[-1.0, -1.0], A_ineq=[[1.0, 2.0], [3.0, 1.0]], b_ineq=[4.0, 6.0],
                         lower=[0.0, 0.0])


def test_lp_optimum_and_duals():
    p = _box_lp()
    report = solve_lp(p)
    assert report.status is SolveStatus.OPTIMAL
    assert report.z == pytest.approx([1.6, 1.2], abs=1e-9)
    assert report.objective == pytest.approx(-2.8)
    assert report.duals == pytest.approx([0.4, 0.2], abs=1e-9)
    assert dual_objective(p, report) == pytest.approx(report.objective, abs=1e-9)


def test_lp_equality_and_free_variables():
    p = LinearProgram(c=[1.0, 2.0], A_eq=[[1.0, 1.0]], b_eq=[3.0], lower=[0.0, 0.0])
    report = solve_lp(p)
    assert report.z == pytest.approx([3.0, 0.0])
    assert kkt_residuals(p, report)["stationarity"] == pytest.approx(0.0, abs=1e-9)


def test_lp_detects_infeasible():
    p = LinearProgram(c=[1.0], A_ineq=[[1.0], [-1.0]], b_ineq=[1.0, -2.0])
    assert solve_lp(p).status is SolveStatus.INFEASIBLE


def test_lp_detects_unbounded():
    p = LinearProgram(c=[-1.0, 0.0], A_ineq=[[0.0, 1.0]], b_ineq=[1.0], lower=[0.0, 0.0])
    assert solve_lp(p).status is SolveStatus.UNBOUNDED


def test_lp_iteration_cap():
    report = solve_lp(_box_lp(), max_iter=0)
    assert report.status is SolveStatus.ITER_LIMIT


def test_lp_redundant_equalities():
    p = LinearProgram(c=[1.0, 1.0], A_eq=[[1.0, 1.0], [2.0, 2.0]], b_eq=[2.0, 4.0], lower=[0.0, 0.0])
    report = solve_lp(p)
    assert report.status is SolveStatus.OPTIMAL
    assert report.objective == pytest.approx(2.0)


def test_program_validation():
    with pytest.raises(DimensionMismatchError):
        LinearProgram(c=[1.0, 1.0], A_ineq=[[1.0]], b_ineq=[1.0])
    with pytest.raises(InvalidInstanceError):
        LinearProgram(c=[1.0], lower=[1.0], upper=[0.0])
    with pytest.raises(InvalidInstanceError):
        QuadraticProgram(Q=[[-1.0]], c=[0.0])
    with pytest.raises(InvalidInstanceError):
        QuadraticProgram(Q=[[1.0, 2.0], [0.0, 1.0]], c=[0.0, 0.0])


def test_qp_interior_minimum():
    p = QuadraticProgram(Q=[[2.0, 0.0], [0.0, 2.0]], c=[-2.0, -4.0])
    report = solve_qp(p)
    assert report.status is SolveStatus.OPTIMAL
    assert report.z == pytest.approx([1.0, 2.0], abs=1e-9)


def test_qp_active_constraint_and_kkt():
    # min (x-1)^2 + (y-2)^2  s.t.  x + y <= 1
    p = QuadraticProgram(Q=[[2.0, 0.0], [0.0, 2.0]], c=[-2.0, -4.0], A_ineq=[[1.0, 1.0]], b_ineq=[1.0])
    report = solve_qp(p)
    assert report.z == pytest.approx([0.0, 1.0], abs=1e-8)
    assert report.duals == pytest.approx([2.0], abs=1e-8)
    residuals = kkt_residuals(p, report)
    assert max(residuals.values()) == pytest.approx(0.0, abs=1e-8)


def test_qp_infeasible():
    p = QuadraticProgram(Q=[[1.0]], c=[0.0], A_ineq=[[1.0], [-1.0]], b_ineq=[0.0, -1.0])
    assert solve_qp(p).status is SolveStatus.INFEASIBLE


def test_qp_warm_start_matches_cold():
    p = QuadraticProgram(Q=[[2.0, 0.5], [0.5, 1.0]], c=[-1.0, -1.0],
                         A_ineq=[[1.0, 1.0]], b_ineq=[0.5], lower=[0.0, 0.0])
    cold = solve_qp(p)
    warm = solve_qp(p, start=[0.0, 0.0])
    assert warm.z == pytest.approx(cold.z, abs=1e-8)


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=10_000))
def test_qp_box_matches_clipped_unconstrained(seed):
    # separable diagonal QP on a box: the solution is the clipped stationary point
    rng = np.random.default_rng(seed)
    n = 4
    d = rng.uniform(0.5, 3.0, n)
    c = rng.uniform(-5, 5, n)
    report = solve_qp(QuadraticProgram(Q=np.diag(d), c=c, lower=-1.0, upper=1.0))
    assert report.status is SolveStatus.OPTIMAL
    assert report.z == pytest.approx(np.clip(-c / d, -1.0, 1.0), abs=1e-7)


@settings(max_examples=25)
@given(st.integers(min_value=0, max_value=10_000))
def test_lp_strong_duality_on_random_feasible_programs(seed):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.1, 2.0, (3, 4))
    b = rng.uniform(1.0, 5.0, 3)
    p = LinearProgram(c=-rng.uniform(0.1, 1.0, 4), A_ineq=A, b_ineq=b, lower=np.zeros(4))
    report = solve_lp(p)
    assert report.status is SolveStatus.OPTIMAL
    assert p.violation(report.z) <= 1e-9
    assert dual_objective(p, report) == pytest.approx(report.objective, abs=1e-7)


def test_independent_rows_skips_dependent():
    M = np.array([[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]])
    assert independent_rows(M, [0, 1, 2]) == [0, 2]


def test_minimize_penalized_quadratic_with_constraint():
    def objective(z):
        return float((z[0] - 2.0) ** 2), np.array([2.0 * (z[0] - 2.0)]), np.array([[2.0]])

    def constraints(z):
        return np.array([z[0] - 1.0]), np.array([[1.0]]), None

    mu = None
    z = np.array([0.0])
    for rho in (10.0, 100.0, 1000.0):
        report = minimize_penalized(objective, constraints, z, rho, mu)
        z, mu = report.z, report.duals
    assert z[0] == pytest.approx(1.0, abs=1e-4)
    assert mu[0] == pytest.approx(2.0, abs=1e-3)


def test_minimize_penalized_rejects_nonpositive_penalty():
    with pytest.raises(InvalidConfigError):
        minimize_penalized(lambda z: (0.0, z, np.eye(1)), None, [0.0], 0.0)
