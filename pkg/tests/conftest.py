import os

# keep test runs from writing log files into the working tree
os.environ.setdefault("MMFIT_LOG_FILE", "")
os.environ.setdefault("MMFIT_ERROR_LOG_FILE", "")
os.environ.setdefault("MMFIT_LOG_LEVEL", "WARNING")

import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
import pytest  # noqa: E402

from mmfit.estimators import RegressionData  # noqa: E402
from mmfit.simdata import simulate  # noqa: E402
from models.mm_models import ContaminationSpec, MMOptions, SimResponse, SimSpec  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def tight_opts():
    return MMOptions(tol=1e-12, max_iter=20000)


@pytest.fixture
def regression_data(rng):
    n, p = 120, 4
    X = np.hstack([np.ones((n, 1)), rng.standard_normal((n, p - 1))])
    beta = np.array([1.0, 2.0, -1.0, 0.5])
    y = X @ beta + rng.standard_t(3, size=n)
    return RegressionData(X, y)


@pytest.fixture
def sparse_data():
    spec = SimSpec(n=500, p=50, seed=7, quantile_q=0.5, response=SimResponse.SPARSE_QUANTILE)
    X, y, truth = simulate(spec)
    return RegressionData(X, y), truth


@pytest.fixture
def contaminated_data():
    spec = SimSpec(n=2000, p=20, seed=3, response=SimResponse.L2E, contamination=ContaminationSpec())
    X, y, truth = simulate(spec)
    return RegressionData(X, y), truth


@pytest.fixture
def write_csv():
    """Writes predictors and a y column with a header; returns the path as a string."""
    def _write(path, X, y, names=None):
        names = names or [f"x{j + 1}" for j in range(X.shape[1])]
        df = pd.DataFrame(X, columns=names)
        df["y"] = y
        df.to_csv(path, index=False)
        return str(path)

    return _write
