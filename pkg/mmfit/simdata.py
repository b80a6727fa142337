"""
Reproducible data generators for the simulation scenarios.

Every generator is a pure function of its arguments and a seed. Random
numbers come from numpy's Generator over the counter-based Philox bit
generator; each purpose (design, noise, response draw, truth, series, CV folds)
gets its own stream derived from SeedSequence([seed, stream_id]).
"""
from enum import Enum
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, special, stats

from logger_config import logger
from mmfit import prox
from mmfit.estimators import multinomial_probs
from mmfit.exceptions import DomainError
from models.mm_models import ContaminationSpec, NoiseFamily, NoiseSpec, SimResponse, SimSpec

STREAMS = {"design": 0, "noise": 1, "response": 2, "truth": 3, "series": 4, "folds": 5}
SPARSE_TRUTH_MIN_P = 21
# nonzero entries of the sparse truth at 0-based indices 0, 2, ..., 20
SPARSE_TRUTH_VALUES = (4.0, 1.8, 1.6, 1.4, 1.2, 1.0, -1.0, -1.2, -1.4, -1.6, -1.8)


class GLMFamily(Enum):
    BERNOULLI = "bernoulli"
    MULTINOMIAL = "multinomial"


def make_rng(seed: int, stream: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, STREAMS[stream]])))


def gen_design(spec: SimSpec) -> np.ndarray:
    """
    Intercept column followed by p-1 Gaussian columns with covariance rho^|i-j|.

    Args:
        spec (SimSpec): Uses n, p, rho and seed.

    Returns:
        np.ndarray: n x p design matrix.
    """
    rng = make_rng(spec.seed, "design")
    k = spec.p - 1
    X = np.ones((spec.n, spec.p))
    if k > 0:
        idx = np.arange(k)
        cov = spec.rho ** np.abs(idx[:, None] - idx[None, :])
        L = linalg.cholesky(cov, lower=True)
        X[:, 1:] = rng.standard_normal((spec.n, k)) @ L.T
    return X


def default_truth_beta(p: int) -> np.ndarray:
    beta = np.full(p, 0.1)
    beta[0] = 1.0
    return beta


def sparse_truth_beta(p: int) -> np.ndarray:
    """Intercept 4 plus ten signals at every other coordinate up to index 20; zeros elsewhere."""
    if p < SPARSE_TRUTH_MIN_P:
        raise DomainError(f"sparse truth needs p >= {SPARSE_TRUTH_MIN_P}, got {p}")
    beta = np.zeros(p)
    beta[0:2 * len(SPARSE_TRUTH_VALUES):2] = SPARSE_TRUTH_VALUES
    return beta


def multinomial_truth(p: int, c: int, seed: int) -> np.ndarray:
    """p x c coefficients with Uniform[0, 0.2] entries (softmax over all c columns)."""
    return make_rng(seed, "truth").uniform(0.0, 0.2, size=(p, c))


def lowrank_truth(p: int, c: int, rank: int, seed: int) -> np.ndarray:
    """
    Reference-coded p x (c-1) coefficients: Uniform[0, 3] entries with every
    row but the intercept row projected to the given rank.
    """
    B = make_rng(seed, "truth").uniform(0.0, 3.0, size=(p, c - 1))
    if p > 1:
        rank = min(rank, p - 1, c - 1)
        B[1:] = prox.project_rank(B[1:], rank).point
    return B


def _noise(n: int, noise: NoiseSpec, rng: np.random.Generator) -> np.ndarray:
    if noise.family is NoiseFamily.STUDENT_T:
        return noise.sd * rng.standard_t(noise.df, size=n)
    return noise.sd * rng.standard_normal(n)


def _noise_quantile(q: float, noise: NoiseSpec) -> float:
    if noise.family is NoiseFamily.STUDENT_T:
        return noise.sd * float(stats.t.ppf(q, noise.df))
    return noise.sd * float(stats.norm.ppf(q))


def gen_quantile_response(X: np.ndarray, beta_star, q: float, noise: NoiseSpec, seed: int) -> np.ndarray:
    """
    y_i = x_i'beta* + (x_ip / 2 + 1) [eps_i - F^-1(q)].

    Removing the noise q-quantile makes beta* the true conditional q-quantile
    coefficient vector; the last column drives the heteroskedasticity.
    """
    rng = make_rng(seed, "noise")
    eps = _noise(X.shape[0], noise, rng)
    multiplier = X[:, -1] / 2.0 + 1.0
    return X @ beta_star + multiplier * (eps - _noise_quantile(q, noise))


def gen_l2e_response(
    X: np.ndarray,
    beta_star,
    contamination: Optional[ContaminationSpec],
    seed: int,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Standard normal regression data with optional contamination.

    The first floor(fraction n) responses are shifted, and so is the second
    design column of the last floor(fraction n) rows. y is drawn from the
    clean design.

    Returns:
        Tuple[np.ndarray, np.ndarray]: (y, contaminated design).
    """
    rng = make_rng(seed, "noise")
    n = X.shape[0]
    y = X @ beta_star + rng.standard_normal(n)
    X_out = np.array(X, dtype=float, copy=True)
    if contamination is None or contamination.fraction == 0:
        return y, X_out
    m = int(np.floor(contamination.fraction * n))
    y[:m] += contamination.shift
    if X_out.shape[1] >= 2:
        X_out[n - m:, 1] += contamination.shift
    else:
        logger.warning("Design has no second column; covariate contamination skipped")
    return y, X_out


def gen_glm_response(
    X: np.ndarray,
    B_star,
    family: GLMFamily,
    seed: int,
    c: Optional[int] = None,
) -> np.ndarray:
    """
    Draw Bernoulli or single-trial multinomial responses.

    For the multinomial family B_star has either c columns (softmax over all
    of them) or c - 1 reference-coded columns; pass c in the second case.
    Multinomial draws come back as an n x c one-hot matrix.
    """
    rng = make_rng(seed, "response")
    n = X.shape[0]
    if family is GLMFamily.BERNOULLI:
        prob = special.expit(X @ np.asarray(B_star, dtype=float).ravel())
        return (rng.random(n) < prob).astype(float)

    B = np.asarray(B_star, dtype=float)
    if c is not None and B.shape[1] == c - 1:
        probs = multinomial_probs(B, X)
    else:
        probs = special.softmax(X @ B, axis=1)
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    draws = np.argmax(rng.random(n)[:, None] < cdf, axis=1)
    Y = np.zeros_like(probs)
    Y[np.arange(n), draws] = 1.0
    return Y


def reference_coded(B_full: np.ndarray) -> np.ndarray:
    """Convert p x c softmax coefficients to the p x (c-1) form with category c as reference."""
    return B_full[:, :-1] - B_full[:, [-1]]


def gen_isotonic_series(n: int = 174, outliers: int = 2, seed: int = 0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Increasing trend plus Gaussian noise with injected spikes.

    Spikes alternate downward and upward with magnitude ten noise standard
    deviations and sit away from both ends of the series.

    Returns:
        Tuple: (y, clean trend, sorted spike indices).
    """
    rng = make_rng(seed, "series")
    t = np.linspace(0.0, 1.0, n)
    trend = 1.2 * t ** 2 + 0.3 * t - 0.4
    sd = 0.08
    y = trend + sd * rng.standard_normal(n)
    margin = max(1, n // 10)
    spikes = np.sort(rng.choice(np.arange(margin, n - margin), size=outliers, replace=False))
    signs = np.where(np.arange(outliers) % 2 == 0, -1.0, 1.0)
    y[spikes] += signs * 10.0 * sd
    return y, trend, spikes


def simulate(spec: SimSpec) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Generate (X, response, truth) for one scenario.

    Multinomial responses are returned as integer codes 1..c; the truth is
    reference coded so it is comparable with fitted coefficients.
    """
    logger.info(f"Simulating {spec.response.value}: n={spec.n}, p={spec.p}, seed={spec.seed}")
    if spec.response is SimResponse.ISOTONIC:
        y, trend, _ = gen_isotonic_series(spec.n, seed=spec.seed)
        X = np.arange(1.0, spec.n + 1.0)[:, None]
        return X, y, trend

    X = gen_design(spec)
    q = spec.quantile_q if spec.quantile_q is not None else 0.5
    if spec.response is SimResponse.QUANTILE:
        beta = default_truth_beta(spec.p)
        return X, gen_quantile_response(X, beta, q, spec.noise, spec.seed), beta
    if spec.response is SimResponse.SPARSE_QUANTILE:
        beta = sparse_truth_beta(spec.p)
        return X, gen_quantile_response(X, beta, q, spec.noise, spec.seed), beta
    if spec.response is SimResponse.L2E:
        beta = default_truth_beta(spec.p)
        y, X_out = gen_l2e_response(X, beta, spec.contamination, spec.seed)
        return X_out, y, beta
    if spec.response is SimResponse.LOGISTIC:
        beta = reference_coded(multinomial_truth(spec.p, 2, spec.seed))[:, 0]
        return X, gen_glm_response(X, beta, GLMFamily.BERNOULLI, spec.seed), beta

    if spec.response is SimResponse.MULTINOMIAL:
        B = reference_coded(multinomial_truth(spec.p, spec.c, spec.seed))
    else:
        B = lowrank_truth(spec.p, spec.c, spec.rank, spec.seed)
    Y = gen_glm_response(X, B, GLMFamily.MULTINOMIAL, spec.seed, c=spec.c)
    return X, np.argmax(Y, axis=1) + 1.0, B
