import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import special

from mmfit import estimators
from mmfit.decompose import build_cache
from mmfit.estimators import MultinomialModel, RegressionData
from mmfit.exceptions import DomainError, InputError, NumericalError
from mmfit.simdata import simulate
from models.mm_models import MMOptions, SimResponse, SimSpec


def newton_logistic(X, y, steps=50):
    beta = np.zeros(X.shape[1])
    for _ in range(steps):
        prob = special.expit(X @ beta)
        H = X.T @ (X * (prob * (1 - prob))[:, None])
        beta = beta + np.linalg.solve(H, X.T @ (y - prob))
    return beta


def newton_multinomial(X, Y, steps=50):
    n, p = X.shape
    k = Y.shape[1]
    B = np.zeros((p, k))
    for _ in range(steps):
        P = estimators.multinomial_probs(B, X)[:, :-1]
        G = X.T @ (Y - P)
        H = np.zeros((p * k, p * k))
        for a in range(k):
            for b in range(k):
                w = P[:, a] * ((a == b) - P[:, b])
                H[a * p:(a + 1) * p, b * p:(b + 1) * p] = X.T @ (X * w[:, None])
        step = np.linalg.solve(H, G.T.ravel())
        B = B + step.reshape(k, p).T
    return B


@pytest.fixture
def logistic_data():
    X, y, truth = simulate(SimSpec(n=400, p=4, seed=1, response=SimResponse.LOGISTIC))
    return RegressionData(X, y), truth


@pytest.fixture
def multinomial_data():
    X, codes, truth = simulate(SimSpec(n=500, p=3, c=3, seed=2, response=SimResponse.MULTINOMIAL))
    return RegressionData(X, estimators.indicator_matrix(codes, 3)), truth


@pytest.fixture
def lowrank_data():
    spec = SimSpec(n=600, p=6, c=4, rank=1, seed=5, response=SimResponse.LOWRANK_MULTINOMIAL)
    X, codes, truth = simulate(spec)
    return RegressionData(X, estimators.indicator_matrix(codes, 4)), truth


def test_logistic_matches_newton(logistic_data, tight_opts):
    data, _ = logistic_data
    result = estimators.fit_logistic(data, tight_opts)
    oracle = newton_logistic(data.X, data.y)
    assert result.objective == pytest.approx(estimators.logistic_nll(oracle, data.X, data.y), rel=1e-6)
    assert_allclose(result.coef, oracle, atol=1e-4)
    assert result.factor_count == 1


def test_logistic_objective_is_nonincreasing(logistic_data):
    data, _ = logistic_data
    result = estimators.fit_logistic(data)
    assert np.all(np.diff(result.objective_history) <= 1e-12)


def test_logistic_rejects_nonbinary_response(regression_data):
    with pytest.raises(InputError):
        estimators.fit_logistic(regression_data)


def test_multinomial_matches_newton(multinomial_data, tight_opts):
    data, _ = multinomial_data
    result = estimators.fit_multinomial(data, 3, tight_opts)
    oracle = newton_multinomial(data.X, data.y)
    assert result.objective == pytest.approx(estimators.multinomial_nll(oracle, data.X, data.y), rel=1e-6)
    assert_allclose(result.coef, oracle, atol=1e-4)
    assert result.coef.shape == (3, 2)
    assert result.factor_count == 1


def test_multinomial_checks_indicator_shape(multinomial_data):
    data, _ = multinomial_data
    with pytest.raises(InputError):
        estimators.fit_multinomial(data, 4)
    bad = RegressionData(data.X, np.ones_like(data.y))
    with pytest.raises(InputError):
        estimators.fit_multinomial(bad, 3)


def test_indicator_matrix_codes_reference_last():
    Y = estimators.indicator_matrix([1, 2, 3, 1], 3)
    assert_allclose(Y, [[1, 0], [0, 1], [0, 0], [1, 0]])
    with pytest.raises(InputError):
        estimators.indicator_matrix([1, 4], 3)
    with pytest.raises(InputError):
        estimators.indicator_matrix([1.5], 3)


def test_multinomial_probs(rng):
    X = rng.standard_normal((10, 3))
    assert_allclose(estimators.multinomial_probs(np.zeros((3, 3)), X), 0.25)
    model = MultinomialModel(B=rng.standard_normal((3, 2)), c=3)
    probs = model.probs(X)
    assert probs.shape == (10, 3)
    assert_allclose(probs.sum(axis=1), 1.0)
    with pytest.raises(DomainError):
        estimators.multinomial_probs(np.zeros((2, 2)), X)


def test_loglik_is_negated_nll(multinomial_data, rng):
    data, _ = multinomial_data
    B = rng.standard_normal((3, 2))
    assert estimators.multinomial_loglik(B, data.X, data.y) == -estimators.multinomial_nll(B, data.X, data.y)


def test_lowrank_without_penalty_is_multinomial_mle(lowrank_data, tight_opts):
    data, _ = lowrank_data
    plain = estimators.fit_multinomial(data, 4, tight_opts)
    lowrank = estimators.fit_lowrank_multinomial(data, 4, lam=0.0, mu=0.01, opts=tight_opts)
    assert_allclose(lowrank.coef, plain.coef, atol=1e-5)
    assert lowrank.factor_count == 2


def test_lowrank_path_shares_factors_and_shrinks(lowrank_data):
    data, _ = lowrank_data
    results = estimators.fit_lowrank_multinomial_path(data, 4, [1e-3, 1e-1, 10.0], mu=0.01)
    assert [r.factor_count for r in results] == [2, 2, 2]
    norms = [np.linalg.norm(r.coef[1:], "nuc") for r in results]
    assert norms[-1] < norms[0]
    for r in results:
        assert np.all(np.diff(r.objective_history) <= 1e-12)
        assert 0 <= r.extras["rank"] <= 3


def test_lowrank_objective_includes_envelope(lowrank_data, rng):
    data, _ = lowrank_data
    B = rng.standard_normal((6, 3))
    plain = estimators.multinomial_nll(B, data.X, data.y) / data.n
    assert estimators.lowrank_objective(B, data.X, data.y, 0.0, 0.01) == pytest.approx(plain)
    assert estimators.lowrank_objective(B, data.X, data.y, 1.0, 0.01) > plain


def test_lowrank_rejects_bad_constants(lowrank_data):
    data, _ = lowrank_data
    with pytest.raises(DomainError):
        estimators.fit_lowrank_multinomial(data, 4, lam=-1.0, mu=0.01)
    with pytest.raises(DomainError):
        estimators.fit_lowrank_multinomial(data, 4, lam=1.0, mu=0.0)


def separable_line():
    X = np.column_stack([np.ones(6), [-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]])
    y = np.array([0.0, 0.0, 0.0, 1.0, 1.0, 1.0])
    return X, y


def test_logistic_first_step_example():
    X, y = np.ones((1, 1)), np.ones(1)
    step = estimators.logistic_step(np.zeros(1), X, y, build_cache(X))
    assert step[0] == pytest.approx(2.0)


def test_logistic_balanced_intercept_only_stays_at_zero():
    data = RegressionData(np.ones((6, 1)), np.array([0.0, 1.0, 0.0, 1.0, 0.0, 1.0]))
    result = estimators.fit_logistic(data)
    assert result.converged
    assert result.coef[0] == pytest.approx(0.0, abs=1e-12)


def test_logistic_detects_perfect_separation():
    X, y = separable_line()
    with pytest.raises(NumericalError, match="perfectly separated") as info:
        estimators.fit_logistic(RegressionData(X, y))
    assert estimators.separation_margin(info.value.snapshot, X, y) > 0
    with pytest.raises(NumericalError):
        estimators.fit_logistic(RegressionData(np.ones((1, 1)), np.ones(1)))


def test_multinomial_detects_perfect_separation():
    X, y = separable_line()
    with pytest.raises(NumericalError, match="perfectly separated"):
        estimators.fit_multinomial(RegressionData(X, y[:, None]), 2)

    x = np.array([-6.0, -5.0, -4.0, -1.0, 0.0, 1.0, 4.0, 5.0, 6.0])
    codes = np.array([1, 1, 1, 3, 3, 3, 2, 2, 2])
    data = RegressionData(np.column_stack([np.ones(9), x]), estimators.indicator_matrix(codes, 3))
    with pytest.raises(NumericalError, match="perfectly separated"):
        estimators.fit_multinomial(data, 3)
    with pytest.raises(NumericalError, match="perfectly separated"):
        estimators.fit_lowrank_multinomial(data, 3, lam=0.0, mu=0.01)


def test_separation_margin_is_nonpositive_on_overlapping_classes(logistic_data, multinomial_data, rng):
    data, _ = logistic_data
    for _ in range(20):
        assert estimators.separation_margin(rng.standard_normal(4) * 5, data.X, data.y) <= 0
    data, _ = multinomial_data
    for _ in range(20):
        assert estimators.separation_margin(rng.standard_normal((3, 2)) * 5, data.X, data.y) <= 0


def test_two_category_multinomial_repeats_logistic_iterates(logistic_data):
    data, _ = logistic_data
    opts = MMOptions(tol=1e-300, max_iter=25)
    logistic = estimators.fit_logistic(data, opts)
    multinomial = estimators.fit_multinomial(RegressionData(data.X, data.y[:, None]), 2, opts)
    assert multinomial.iterations == logistic.iterations == 25
    assert_allclose(multinomial.objective_history, logistic.objective_history, rtol=1e-12)
    assert_allclose(multinomial.coef[:, 0], logistic.coef, atol=1e-12)


def test_multinomial_probs_hand_example():
    B = np.array([[np.log(2.0), 0.0]])
    assert_allclose(estimators.multinomial_probs(B, np.ones((1, 1))), [[0.5, 0.25, 0.25]])


def test_multinomial_probs_survive_huge_logits():
    probs = estimators.multinomial_probs(np.array([[1000.0, 0.0]]), np.ones((1, 1)))
    assert np.all(np.isfinite(probs))
    assert_allclose(probs, [[1.0, 0.0, 0.0]], atol=1e-300)
    assert estimators.multinomial_nll(np.array([[1000.0, 0.0]]), np.ones((1, 1)), np.array([[1.0, 0.0]])) == pytest.approx(0.0)


@pytest.mark.parametrize("accelerate", [False, True])
def test_glm_gradient_vanishes_at_convergence(logistic_data, multinomial_data, accelerate):
    opts = MMOptions(tol=1e-14, max_iter=50000, accelerate=accelerate)
    data, _ = logistic_data
    beta = estimators.fit_logistic(data, opts).coef
    assert np.max(np.abs(data.X.T @ (data.y - special.expit(data.X @ beta)))) < 1e-6 * data.n
    data, _ = multinomial_data
    B = estimators.fit_multinomial(data, 3, opts).coef
    assert np.max(np.abs(data.X.T @ (data.y - estimators.multinomial_probs(B, data.X)[:, :-1]))) < 1e-6 * data.n


@pytest.mark.slow
def test_lowrank_penalty_improves_held_out_loglik():
    """Rank-1 truth at (n, p, c) = (2000, 10, 5): the best lambda beats lambda = 0 on a held-out half."""
    lambdas = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2, 3e-2]
    wins = 0
    for seed in range(20):
        spec = SimSpec(n=4000, p=10, c=5, rank=1, seed=seed, response=SimResponse.LOWRANK_MULTINOMIAL)
        X, codes, _ = simulate(spec)
        Y = estimators.indicator_matrix(codes, 5)
        train = RegressionData(X[:2000], Y[:2000])
        X_test, Y_test = X[2000:], Y[2000:]
        plain = estimators.fit_lowrank_multinomial(train, 5, lam=0.0, mu=0.01)
        path = estimators.fit_lowrank_multinomial_path(train, 5, lambdas, mu=0.01)
        best = max(estimators.multinomial_loglik(r.coef, X_test, Y_test) for r in path)
        if best > estimators.multinomial_loglik(plain.coef, X_test, Y_test):
            wins += 1
    assert wins >= 18
