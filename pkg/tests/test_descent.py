"""Every fitter's accepted iterates never increase the objective of the stage they belong to."""
import numpy as np
import pytest

from mmfit import estimators
from mmfit.estimators import RegressionData
from mmfit.simdata import gen_isotonic_series, simulate
from models.mm_models import ContaminationSpec, QuantileSpec, SimResponse, SimSpec

ESTIMATORS = [
    "lad", "quantile", "sparse-quantile-pd", "sparse-quantile-l0", "l2e",
    "isotonic-l2e", "logistic", "multinomial", "lowrank-multinomial",
]


def _data(response: SimResponse, seed: int, **fields) -> RegressionData:
    X, y, _ = simulate(SimSpec(response=response, seed=seed, **fields))
    if response in (SimResponse.MULTINOMIAL, SimResponse.LOWRANK_MULTINOMIAL):
        y = estimators.indicator_matrix(y, fields["c"])
    return RegressionData(X, y)


def _split_stages(result):
    """Cut an annealed run's history back into its per-stage segments."""
    segments, start = [], 0
    for stage in result.extras["anneal_path"]:
        stop = start + stage["iterations"] + 1
        segments.append(result.objective_history[start:stop])
        start = stop
    assert start == len(result.objective_history)
    return segments


def stage_histories(name: str, seed: int):
    if name == "lad":
        return [estimators.fit_lad(_data(SimResponse.QUANTILE, seed, n=150, p=4, quantile_q=0.5), 0.2).objective_history]
    if name == "quantile":
        data = _data(SimResponse.QUANTILE, seed, n=150, p=4, quantile_q=0.3)
        return [estimators.fit_quantile(data, QuantileSpec(q=0.3, mu=0.3)).objective_history]
    if name == "sparse-quantile-pd":
        data = _data(SimResponse.SPARSE_QUANTILE, seed, n=100, p=25, quantile_q=0.5)
        return _split_stages(estimators.fit_sparse_quantile_pd(data, QuantileSpec(q=0.5), 5))
    if name == "sparse-quantile-l0":
        data = _data(SimResponse.SPARSE_QUANTILE, seed, n=100, p=25, quantile_q=0.5)
        return [estimators.fit_sparse_quantile_l0(data, QuantileSpec(q=0.5), lam=0.05, alpha=0.1).objective_history]
    if name == "l2e":
        data = _data(SimResponse.L2E, seed, n=200, p=5, contamination=ContaminationSpec())
        return [estimators.fit_l2e(data).objective_history]
    if name == "isotonic-l2e":
        y, _, _ = gen_isotonic_series(n=60, seed=seed)
        return _split_stages(estimators.fit_isotonic_l2e(y))
    if name == "logistic":
        return [estimators.fit_logistic(_data(SimResponse.LOGISTIC, seed, n=200, p=3)).objective_history]
    if name == "multinomial":
        data = _data(SimResponse.MULTINOMIAL, seed, n=200, p=3, c=3)
        return [estimators.fit_multinomial(data, 3).objective_history]
    data = _data(SimResponse.LOWRANK_MULTINOMIAL, seed, n=200, p=4, c=3)
    return [estimators.fit_lowrank_multinomial(data, 3, lam=0.05, mu=0.01).objective_history]


def assert_descent(name: str, seeds) -> None:
    for seed in seeds:
        for history in stage_histories(name, seed):
            steps = np.diff(history)
            assert np.all(steps <= 1e-12 * (1.0 + np.abs(history[:-1]))), f"{name} seed {seed}"


@pytest.mark.parametrize("name", ESTIMATORS)
def test_descent(name):
    assert_descent(name, range(3))


@pytest.mark.slow
@pytest.mark.parametrize("name", ESTIMATORS)
def test_descent_fifty_seeds(name):
    assert_descent(name, range(50))
