import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from mmfit import prox
from mmfit.decompose import build_cache, solve_normal
from mmfit.exceptions import DegenerateError, DomainError, NumericalError, StateError
from mmfit.mmengine import (
    TRACE_COLUMNS,
    ConvergenceDiagnostics,
    MMProblem,
    MMState,
    check_majorization,
    check_rate_bound,
    deweight,
    maybe_restart,
    nesterov_anchor,
    rescale_weights,
    run_mm,
    sharp_lad_weights,
)
from models.mm_models import MMOptions


def quadratic_problem(center, curvature=2.0):
    """f(b) = ||b - center||^2 with the majorizer of curvature `curvature` >= 2."""
    center = np.asarray(center, dtype=float)

    def objective(b):
        return float(np.sum((b - center) ** 2))

    def gradient(b):
        return 2.0 * (b - center)

    def argmin(anchor):
        return anchor - gradient(anchor) / curvature

    return MMProblem(objective, argmin, gradient=gradient, lipschitz_L=curvature, strong_mu=2.0, name="quad")


def test_run_mm_converges_on_quadratic():
    problem = quadratic_problem([1.0, -2.0], curvature=4.0)
    result = run_mm(problem, np.zeros(2), MMOptions(tol=1e-12))
    assert result.converged
    assert_allclose(result.coef, [1.0, -2.0], atol=1e-5)
    assert result.factor_count == 0
    assert len(result.objective_history) == result.iterations + 1


def test_objective_history_is_nonincreasing():
    problem = quadratic_problem([3.0, 1.0, -1.0], curvature=10.0)
    for accelerate in (False, True):
        result = run_mm(problem, np.zeros(3), MMOptions(tol=1e-12, accelerate=accelerate))
        assert np.all(np.diff(result.objective_history) <= 1e-12)


def test_acceleration_takes_fewer_iterations():
    problem = quadratic_problem(np.linspace(-1, 1, 5), curvature=50.0)
    plain = run_mm(problem, np.zeros(5), MMOptions(tol=1e-10))
    fast = run_mm(problem, np.zeros(5), MMOptions(tol=1e-10, accelerate=True))
    assert fast.iterations < plain.iterations
    assert fast.objective <= plain.objective + 1e-8


def test_max_iter_zero_returns_initial_point():
    problem = quadratic_problem([1.0])
    result = run_mm(problem, np.array([5.0]), MMOptions(max_iter=0))
    assert not result.converged
    assert result.iterations == 0
    assert_allclose(result.coef, [5.0])
    assert result.objective_history == [16.0]


def test_nonfinite_objective_raises_with_snapshot():
    problem = MMProblem(lambda b: float("nan") if b[0] > 1 else float(b[0] ** 2), lambda b: b + 1.0)
    with pytest.raises(NumericalError) as info:
        run_mm(problem, np.array([0.5]), MMOptions(max_iter=5))
    assert_allclose(info.value.snapshot, [1.5])


def test_nonfinite_initial_objective():
    problem = MMProblem(lambda b: float("inf"), lambda b: b)
    with pytest.raises(NumericalError):
        run_mm(problem, np.zeros(1))


def test_nesterov_anchor_extrapolates():
    state = MMState(beta=np.array([2.0]), beta_prev=np.array([1.0]), nesterov_counter=4)
    assert_allclose(nesterov_anchor(state), [2.0 + 3.0 / 6.0])
    state.nesterov_counter = 1
    assert_allclose(nesterov_anchor(state), [2.0])


def test_maybe_restart_accepts_ties_and_resets_on_increase():
    state = MMState(beta=np.zeros(1), beta_prev=np.zeros(1), objective_history=[1.0], nesterov_counter=5)
    assert not maybe_restart(state, 1.0)
    assert state.nesterov_counter == 5
    assert maybe_restart(state, 1.5)
    assert state.nesterov_counter == 1
    assert state.restarts == 1
    assert maybe_restart(state, float("nan"))


def test_maybe_restart_needs_history():
    state = MMState(beta=np.zeros(1), beta_prev=np.zeros(1))
    with pytest.raises(StateError):
        maybe_restart(state, 0.0)


def test_deweight_shifts_responses():
    y = np.array([1.0, 2.0, 3.0])
    mu = np.array([0.0, 0.0, 0.0])
    assert_allclose(deweight(y, mu, np.array([1.0, 0.5, 0.0])), [1.0, 1.0, 0.0])
    with pytest.raises(DomainError):
        deweight(y, mu, np.array([1.0, 1.5, 0.0]))
    with pytest.raises(DomainError):
        deweight(y, mu[:2], np.ones(3))


def test_rescale_weights():
    assert_allclose(rescale_weights([2.0, 1.0]), [1.0, 0.5])
    with pytest.raises(DegenerateError):
        rescale_weights([0.0, 0.0])


def test_sharp_lad_weights():
    assert_allclose(sharp_lad_weights(np.array([0.5, 2.0, -4.0]), 1.0), [1.0, 0.5, 0.25])


def test_best_quadratic_surrogate_gives_moreau_responses():
    """One deweighted step from the best quadratic LAD majorizer reproduces y - prox(r)."""
    rng = np.random.default_rng(11)
    for _ in range(100):
        n = int(rng.integers(5, 200))
        p = int(rng.integers(1, min(20, n - 1) + 1))
        X = rng.standard_normal((n, p))
        y = rng.standard_normal(n) * 3
        beta = rng.standard_normal(p)
        mu = float(rng.uniform(0.05, 2.0))
        fitted = X @ beta
        r = y - fitted
        w = sharp_lad_weights(r, mu)
        assert_allclose(deweight(y, fitted, w), y - prox.prox_abs(r, mu), atol=1e-12)


def test_trace_written_with_expected_columns(tmp_path):
    path = tmp_path / "trace.csv"
    problem = quadratic_problem([1.0, 2.0], curvature=3.0)
    result = run_mm(problem, np.zeros(2), MMOptions(tol=1e-10, trace_path=str(path), accelerate=True))
    trace = pd.read_csv(path)
    assert list(trace.columns) == TRACE_COLUMNS
    assert len(trace) == result.iterations + 1
    assert np.all(np.isfinite(trace["grad_norm"]))


def test_rate_bound_audit_on_strongly_convex_least_squares():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 4))
    y = rng.standard_normal(60)
    rho = 1.0
    cache = build_cache(X, need_spectral=True, need_cholesky=False)
    L = float(cache.eigvals[0]) + rho

    def objective(b):
        return 0.5 * float(np.sum((y - X @ b) ** 2)) + 0.5 * rho * float(b @ b)

    def gradient(b):
        return -X.T @ (y - X @ b) + rho * b

    problem = MMProblem(objective, lambda b: b - gradient(b) / L, gradient=gradient,
                        lipschitz_L=L, strong_mu=rho)
    result = run_mm(problem, np.zeros(4), MMOptions(tol=1e-14, trace_gradients=True))
    exact = np.linalg.solve(X.T @ X + rho * np.eye(4), X.T @ y)
    report = check_rate_bound(result.diagnostics, result.objective_history, objective(exact))
    assert report.geometric_violations == 0
    assert report.grad_sum_ok
    assert result.diagnostics.rate_bound_violations == 0
    assert 0 < report.contraction_factor < 1


def test_rate_bound_needs_constants():
    with pytest.raises(DomainError):
        check_rate_bound(ConvergenceDiagnostics(), [1.0], 0.0)


def test_solve_normal_used_as_surrogate_argmin():
    """A least squares MM step against a cached factor converges in one iteration."""
    rng = np.random.default_rng(8)
    X = rng.standard_normal((30, 3))
    y = rng.standard_normal(30)
    cache = build_cache(X)
    problem = MMProblem(lambda b: float(np.sum((y - X @ b) ** 2)), lambda b: solve_normal(cache, X.T @ y))
    result = run_mm(problem, np.zeros(3), MMOptions(tol=1e-12))
    assert result.converged
    assert result.iterations == 2


def test_check_majorization_flags_a_bad_surrogate(rng):
    problem = quadratic_problem([1.0, -2.0])
    anchors = rng.standard_normal((10, 2))
    points = rng.standard_normal((10, 2)) * 5
    with pytest.raises(DomainError):
        check_majorization(problem, anchors, points)

    for curvature, valid in [(2.0, True), (3.0, True), (1.0, False)]:
        def surrogate(b, a, curvature=curvature):
            return problem.objective(a) + float(problem.gradient(a) @ (b - a)) + 0.5 * curvature * float(np.sum((b - a) ** 2))

        problem.surrogate_value = surrogate
        report = check_majorization(problem, anchors, points)
        assert report.checks == 100
        assert report.tangency_error <= 1e-12
        assert (report.worst_violation <= 1e-12) == valid
