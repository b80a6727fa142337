"""
Model fitters. Each one turns its loss into an MMProblem whose surrogate is an
ordinary (possibly ridge-shifted) least squares problem, then solves every
iteration against one factorization built up front.
"""
import math
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np
from scipy import special
from sklearn.isotonic import IsotonicRegression

from logger_config import logger
from mmfit import prox
from mmfit.decompose import (
    PIVOT_TOLERANCE,
    FactorCache,
    SylvesterFactors,
    build_cache,
    build_gram_cache,
    build_sylvester_factors,
    bohning_E,
    curvature_bounds,
    default_ridge,
    largest_eigenvalue,
    solve_normal,
    solve_ridge_spectral,
    sylvester_solve,
)
from mmfit.exceptions import DomainError, FactorizationError, InputError, NumericalError
from mmfit.mmengine import FitResult, MMProblem, deweight, run_mm, sharp_lad_weights
from models.mm_models import (
    AnnealSchedule,
    MMOptions,
    QuantileSmoothing,
    QuantileSpec,
    SparsityPenalty,
    SparsityPenaltyKind,
)

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
L2E_SELF_TERM = 1.0 / (2.0 * math.sqrt(math.pi))
ARMIJO = 1e-4
MAX_HALVINGS = 50
TAU_MIN = 1e-8
TAU_CAP_FACTOR = 1e4
MAD_SCALE = 1.4826
SEPARATION_NORM = 1e6
SEPARATION_MARGIN = 1e-8
PROJECTION_TOL = 1e-6
ISOTONIC_VIOLATION_TOL = 1e-5
DEFAULT_ALPHA = 0.01


@dataclass(frozen=True)
class RegressionData:
    """
    Design and response of one fitting problem.

    y is an n-vector, or the n x (c-1) indicator matrix for multinomial
    models. The intercept flag defaults to "first column is all ones"; an
    intercept is never penalized.
    """
    X: np.ndarray
    y: np.ndarray
    intercept: Optional[bool] = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InputError(f"design must be a nonempty matrix, got shape {X.shape}")
        if y.ndim not in (1, 2) or y.shape[0] != X.shape[0]:
            raise InputError(f"response has {y.shape[0] if y.ndim else 0} rows, design has {X.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InputError("design or response contains NaN or infinite values")
        intercept = self.intercept
        if intercept is None:
            intercept = bool(np.all(X[:, 0] == 1.0))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "intercept", intercept)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def penalized(self) -> slice:
        return slice(1, None) if self.intercept else slice(0, None)


@dataclass(frozen=True)
class L2EState:
    beta: np.ndarray
    tau: float
    weights: np.ndarray

    @classmethod
    def from_result(cls, result: FitResult) -> "L2EState":
        return cls(
            beta=np.asarray(result.coef),
            tau=float(result.extras["tau"]),
            weights=np.asarray(result.extras["weights"]),
        )


@dataclass(frozen=True)
class MultinomialModel:
    """Coefficients B (p x (c-1)); category c is the reference with logit 0."""
    B: np.ndarray
    c: int

    def probs(self, X: np.ndarray) -> np.ndarray:
        return multinomial_probs(self.B, X)


# bandwidths

def default_quantile_bandwidth(n: int, p: int) -> float:
    return max(((math.log(n) + p) / n) ** 0.4, 0.05)


def default_sparse_bandwidth(n: int, p: int, q: float) -> float:
    return max(0.05, math.sqrt(q * (1.0 - q)) * (math.log(max(p, 1)) / n) ** 0.25)


# objectives

def lad_objective(beta, X, y, mu: float) -> float:
    return float(np.sum(prox.moreau_abs(y - X @ beta, mu)))


def quantile_objective(
    beta,
    X,
    y,
    q: float,
    mu: float,
    smoothing: QuantileSmoothing = QuantileSmoothing.CONVOLUTION,
    ridge_penalty: float = 0.0,
) -> float:
    """Smoothed check loss averaged over observations, plus an optional (rho/2)||beta||^2."""
    r = np.atleast_1d(y - X @ beta)
    if smoothing is QuantileSmoothing.MOREAU:
        loss = np.mean(prox.moreau_check(r, mu, q))
    else:
        loss = np.mean((q - 0.5) * r + 0.5 * prox.conv_smoothed_abs(r, mu))
    return float(loss + 0.5 * ridge_penalty * float(beta @ beta))


def l0_objective(
    beta,
    X,
    y,
    q: float,
    mu: float,
    lam: float,
    alpha: float,
    penalized: slice = slice(1, None),
    smoothing: QuantileSmoothing = QuantileSmoothing.CONVOLUTION,
) -> float:
    penalty = prox.prox_l0(beta[penalized], alpha).envelope_value if beta[penalized].size else 0.0
    return quantile_objective(beta, X, y, q, mu, smoothing) + lam * penalty


def _l2e_value(tau: float, r: np.ndarray) -> float:
    return float(tau * L2E_SELF_TERM - tau * SQRT_2_OVER_PI * np.mean(np.exp(-0.5 * (tau * r) ** 2)))


def _l2e_tau_gradient(tau: float, r: np.ndarray) -> float:
    tr2 = (tau * r) ** 2
    return float(L2E_SELF_TERM - SQRT_2_OVER_PI * np.mean(np.exp(-0.5 * tr2) * (1.0 - tr2)))


def l2e_objective(beta, tau: float, X, y) -> float:
    return _l2e_value(tau, y - X @ beta)


def isotonic_objective(beta, tau: float, y, lam: float) -> float:
    """L2E loss with one location per observation plus (lam/2) dist^2(D beta, R+)."""
    beta = np.asarray(beta, dtype=float)
    dist2 = prox.project_orthant(np.diff(beta)).squared_distance
    return _l2e_value(tau, y - beta) + 0.5 * lam * dist2


def logistic_nll(beta, X, y) -> float:
    eta = X @ beta
    return float(np.sum(np.logaddexp(0.0, eta) - y * eta))


def _reference_logits(B, X) -> np.ndarray:
    R = X @ B
    return np.hstack([R, np.zeros((R.shape[0], 1))])


def multinomial_probs(B, X) -> np.ndarray:
    """Category probabilities, n x c, with the reference category last."""
    B = np.asarray(B, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.shape[1] != B.shape[0]:
        raise DomainError(f"design has {X.shape[1]} columns but B has {B.shape[0]} rows")
    return special.softmax(_reference_logits(B, X), axis=1)


def multinomial_nll(B, X, Y) -> float:
    logits = _reference_logits(B, X)
    return float(np.sum(special.logsumexp(logits, axis=1)) - np.sum(Y * logits[:, :-1]))


def multinomial_loglik(B, X, Y) -> float:
    return -multinomial_nll(B, X, Y)


def lowrank_objective(B, X, Y, lam: float, mu: float, penalized: slice = slice(1, None)) -> float:
    n = X.shape[0]
    penalty = 0.0
    if lam > 0 and B[penalized].size:
        penalty = prox.prox_nuclear(B[penalized], mu).envelope_value
    return multinomial_nll(B, X, Y) / n + lam * penalty


def indicator_matrix(codes, c: int) -> np.ndarray:
    """
    One-hot encode category codes 1..c into an n x (c-1) matrix.

    Category c (the reference) becomes an all-zero row.

    Raises:
        InputError: If a code is not an integer in 1..c.
    """
    codes = np.asarray(codes, dtype=float).ravel()
    if np.any(codes != np.round(codes)) or np.any(codes < 1) or np.any(codes > c):
        raise InputError(f"multinomial responses must be integer codes in 1..{c}")
    codes = codes.astype(int)
    Y = np.zeros((codes.shape[0], c - 1))
    rows = np.nonzero(codes < c)[0]
    Y[rows, codes[rows] - 1] = 1.0
    return Y


def pava_fit(y) -> np.ndarray:
    """Least squares isotonic (nondecreasing) fit by pooled adjacent violators."""
    y = np.asarray(y, dtype=float).ravel()
    return IsotonicRegression(increasing=True).fit_transform(np.arange(y.shape[0]), y)


# shared plumbing

def _cholesky_cache(X: np.ndarray, name: str) -> FactorCache:
    try:
        return build_cache(X)
    except FactorizationError:
        gram = X.T @ X
        ridge = default_ridge(gram)
        logger.warning(f"[{name}] Gram matrix is singular; refactorizing with ridge {ridge:.3g}")
        return build_gram_cache(gram, ridge)


def _with_spectral_ridge(cache: FactorCache, name: str) -> FactorCache:
    vals = cache.eigvals
    if vals[-1] <= PIVOT_TOLERANCE * max(vals[0], 1.0):
        ridge = default_ridge(cache.gram)
        logger.warning(f"[{name}] Gram matrix is singular; shifting its spectrum by ridge {ridge:.3g}")
        return replace(cache, ridge_used=ridge)
    return cache


def _spectral_cache(X: np.ndarray, name: str) -> FactorCache:
    return _with_spectral_ridge(build_cache(X, need_spectral=True, need_cholesky=False), name)


def _solve(cache: FactorCache, rhs: np.ndarray, anchor: np.ndarray, scale: float = 1.0, shift: float = 0.0):
    """
    Minimize (scale/2)||ytilde - X b||^2 + (shift/2)||b - target||^2 given
    rhs = scale X'ytilde + shift target.

    A cache ridge enters as the proximal term (scale ridge / 2)||b - anchor||^2,
    which keeps the surrogate a majorizer.
    """
    rhs = rhs + scale * cache.ridge_used * anchor
    if shift == 0.0 and cache.has_cholesky:
        return solve_normal(cache, rhs / scale)
    return solve_ridge_spectral(cache, scale, shift, rhs)


def _ols(cache: FactorCache, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    return _solve(cache, X.T @ y, np.zeros(cache.p))


def _penalized_count(data: RegressionData) -> int:
    return data.p - 1 if data.intercept else data.p


def _log_start(name: str, data: RegressionData, **params) -> None:
    details = ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in params.items())
    logger.info(f"[{name}] fitting n={data.n}, p={data.p}" + (f", {details}" if details else ""))


def _log_finish(name: str, result: FitResult) -> None:
    logger.info(
        f"[{name}] finished: iterations={result.iterations}, converged={result.converged}, "
        f"objective={result.objective:.10g}, factorizations={result.factor_count}"
    )


def _quantile_scale(n: int, mu: float, smoothing: QuantileSmoothing) -> float:
    if smoothing is QuantileSmoothing.MOREAU:
        return 1.0 / (n * mu)
    return 1.0 / (2.0 * n * mu)


def _quantile_response(y, r, q: float, mu: float, smoothing: QuantileSmoothing) -> np.ndarray:
    """Shifted responses of the quantile surrogate anchored at residuals r."""
    if smoothing is QuantileSmoothing.MOREAU:
        return y - prox.prox_check(r, mu, q)
    return y - prox.prox_abs(r, mu) + (2.0 * q - 1.0) * mu


def _quantile_gradient(beta, X, y, q, mu, smoothing, ridge_penalty=0.0):
    n = X.shape[0]
    r = y - X @ beta
    if smoothing is QuantileSmoothing.MOREAU:
        psi = (r - prox.prox_check(r, mu, q)) / mu
    else:
        psi = (q - 0.5) + 0.5 * np.clip(r / mu, -1.0, 1.0)
    return -X.T @ psi / n + ridge_penalty * beta


# LAD and quantile

def lad_problem(data: RegressionData, mu: float, cache: FactorCache) -> MMProblem:
    """
    MM instance of smoothed least absolute deviations, sum_i M_mu(y_i - x_i'beta).

    The surrogate anchored at beta_m replaces each Huber term by
    |z_i| + (r_i - z_i)^2 / (2 mu) with z = prox_{mu|.|}(r_m), plus the cache
    ridge as a proximal term; its minimizer regresses y - z on X.
    """
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    X, y = data.X, data.y

    def objective(b):
        return lad_objective(b, X, y, mu)

    def argmin(b):
        z = prox.prox_abs(y - X @ b, mu)
        return _solve(cache, X.T @ (y - z), b)

    def surrogate(b, anchor):
        z = prox.prox_abs(y - X @ anchor, mu)
        r = y - X @ b
        prox_term = cache.ridge_used * float(np.sum((b - anchor) ** 2))
        return float(np.sum(np.abs(z) + (r - z) ** 2 / (2.0 * mu)) + prox_term / (2.0 * mu))

    def gradient(b):
        r = y - X @ b
        return -X.T @ ((r - prox.prox_abs(r, mu)) / mu)

    return MMProblem(objective, argmin, surrogate, gradient, name="lad")


def fit_lad(
    data: RegressionData,
    mu: float,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
) -> FitResult:
    """
    Smoothed least absolute deviations: minimize sum_i M_mu(y_i - x_i'beta).

    Each iteration regresses the shifted responses y - prox_{mu|.|}(r_m) on X
    against one Cholesky factor, starting from least squares.

    Args:
        data (RegressionData): Design and response.
        mu (float): Huber smoothing constant.
        opts (MMOptions): Engine options.
        cache (FactorCache): Reuse an existing Cholesky cache.

    Returns:
        FitResult: Coefficients with factor_count from the cache (1).
    """
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    opts = opts or MMOptions()
    cache = cache or _cholesky_cache(data.X, "lad")
    problem = lad_problem(data, mu, cache)
    _log_start("lad", data, mu=float(mu))
    result = run_mm(problem, _ols(cache, data.X, data.y), opts)
    result.factor_count = cache.factor_count
    result.extras["mu"] = mu
    _log_finish("lad", result)
    return result


def quantile_problem(
    data: RegressionData,
    spec: QuantileSpec,
    cache: FactorCache,
    ridge_penalty: float = 0.0,
) -> MMProblem:
    """
    MM instance of smoothed quantile regression at level spec.q.

    The convolution surrogate bounds C_mu(r) / 2 by its quadratic majorizer
    at the anchor residuals; the Moreau surrogate bounds M_{mu rho_q}(r) by
    rho_q(z) + (r - z)^2 / (2 mu) with z = prox_{mu rho_q}(r_m). lipschitz_L
    is set when the cache holds the Gram spectrum.
    """
    if ridge_penalty < 0:
        raise DomainError(f"ridge_penalty must be nonnegative, got {ridge_penalty}")
    X, y = data.X, data.y
    q, smoothing = spec.q, spec.smoothing
    mu = spec.mu or default_quantile_bandwidth(data.n, data.p)
    scale = _quantile_scale(data.n, mu, smoothing)

    def objective(b):
        return quantile_objective(b, X, y, q, mu, smoothing, ridge_penalty)

    def argmin(b):
        ytilde = _quantile_response(y, y - X @ b, q, mu, smoothing)
        return _solve(cache, scale * (X.T @ ytilde), b, scale, ridge_penalty)

    def surrogate(b, anchor):
        r_m = y - X @ anchor
        r = y - X @ b
        if smoothing is QuantileSmoothing.MOREAU:
            z = prox.prox_check(r_m, mu, q)
            loss = np.mean(prox.check_loss(z, q) + (r - z) ** 2 / (2.0 * mu))
        else:
            z = prox.prox_abs(r_m, mu)
            loss = np.mean((q - 0.5) * r + 0.5 * np.abs(z) + mu / 4.0 + (r - z) ** 2 / (4.0 * mu))
        prox_term = 0.5 * scale * cache.ridge_used * float(np.sum((b - anchor) ** 2))
        return float(loss + 0.5 * ridge_penalty * float(b @ b) + prox_term)

    def gradient(b):
        return _quantile_gradient(b, X, y, q, mu, smoothing, ridge_penalty)

    lipschitz = strong = None
    if cache.has_spectral:
        lipschitz, _ = curvature_bounds(cache, scale, ridge_penalty)
        strong = ridge_penalty if ridge_penalty > 0 else None
    return MMProblem(objective, argmin, surrogate, gradient, lipschitz, strong, name="quantile")


def fit_quantile(
    data: RegressionData,
    spec: QuantileSpec,
    opts: Optional[MMOptions] = None,
    ridge_penalty: float = 0.0,
    cache: Optional[FactorCache] = None,
) -> FitResult:
    """
    Smoothed quantile regression at level spec.q.

    The default convolution smoothing minimizes
    (1/n) sum_i [(q - 1/2) r_i + C_mu(r_i) / 2] and regresses
    y - prox_{mu|.|}(r_m) + (2q - 1) mu on X each iteration. The Moreau
    variant minimizes (1/n) sum_i M_{mu rho_q}(r_i) instead. A positive
    ridge_penalty adds (rho/2)||beta||^2 and switches to the spectral cache.
    Tracing gradients keeps the Cholesky path and reports the Lipschitz
    constant from the top eigenvalue of X'X alone.

    Args:
        data (RegressionData): Design and response.
        spec (QuantileSpec): Level, bandwidth (default from n and p) and smoothing.
        opts (MMOptions): Engine options.
        ridge_penalty (float): Nonnegative ridge constant.
        cache (FactorCache): Reuse an existing cache.

    Returns:
        FitResult: Coefficients; extras carry the bandwidth used.
    """
    if ridge_penalty < 0:
        raise DomainError(f"ridge_penalty must be nonnegative, got {ridge_penalty}")
    opts = opts or MMOptions()
    X, y = data.X, data.y
    mu = spec.mu or default_quantile_bandwidth(data.n, data.p)
    if cache is None:
        cache = _spectral_cache(X, "quantile") if ridge_penalty > 0 else _cholesky_cache(X, "quantile")
    problem = quantile_problem(data, spec, cache, ridge_penalty)
    if problem.lipschitz_L is None and opts.trace_gradients:
        problem.lipschitz_L = _quantile_scale(data.n, mu, spec.smoothing) * largest_eigenvalue(cache) + ridge_penalty

    _log_start("quantile", data, q=float(spec.q), mu=float(mu), smoothing=spec.smoothing.value)
    result = run_mm(problem, _ols(cache, X, y), opts)
    result.factor_count = cache.factor_count
    result.extras.update({"q": spec.q, "mu": mu, "smoothing": spec.smoothing.value})
    _log_finish("quantile", result)
    return result


# sparse quantile

def _support(data: RegressionData, coef: np.ndarray) -> List[int]:
    offset = 1 if data.intercept else 0
    return [int(j) + offset for j in np.nonzero(coef[data.penalized])[0]]


def fit_sparse_quantile_pd(
    data: RegressionData,
    spec: QuantileSpec,
    k: int,
    sched: Optional[AnnealSchedule] = None,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
) -> FitResult:
    """
    Sparse quantile regression by the proximal distance method.

    Minimizes the smoothed quantile loss plus (lam/2) dist^2(beta, S_k) on the
    non-intercept coordinates while lam grows geometrically. Every inner
    iteration is a ridge-shifted solve against one spectral decomposition,
    so the whole anneal costs a single factorization.

    Args:
        data (RegressionData): Design and response.
        spec (QuantileSpec): Level and bandwidth (default: sparse bandwidth rule).
        k (int): Number of nonzero non-intercept coefficients.
        sched (AnnealSchedule): Penalty schedule.
        opts (MMOptions): Inner engine options; sched.inner_tol overrides tol.
        cache (FactorCache): Reuse a spectral cache (e.g. across a k grid).

    Returns:
        FitResult: Coefficients projected onto S_k. extras holds the dense
            minimizer, the support, and the annealing path.

    Raises:
        DomainError: If k is negative.
        NumericalError: If the objective diverges during annealing.
    """
    sched = sched or AnnealSchedule()
    opts = opts or MMOptions()
    if k < 0:
        raise DomainError(f"sparsity level k must be nonnegative, got {k}")
    X, y = data.X, data.y
    q, smoothing = spec.q, spec.smoothing
    mu = spec.mu or default_sparse_bandwidth(data.n, data.p, q)
    pen = data.penalized
    cache = cache or _spectral_cache(X, "sparse-quantile-pd")

    if k >= _penalized_count(data):
        logger.warning(f"[sparse-quantile-pd] k={k} leaves every coefficient free; fitting unconstrained")
        result = fit_quantile(data, spec.model_copy(update={"mu": mu}), opts, cache=cache)
        result.extras.update({"k": k, "support": _support(data, result.coef), "dense_coef": result.coef.copy()})
        return result

    scale = _quantile_scale(data.n, mu, smoothing)
    inner_opts = opts.model_copy(update={"tol": sched.inner_tol, "trace_path": None})

    def build_problem(lam: float) -> MMProblem:
        def objective(b):
            dist2 = prox.project_sparsity(b[pen], k).squared_distance
            return quantile_objective(b, X, y, q, mu, smoothing) + 0.5 * lam * dist2

        def argmin(b):
            ytilde = _quantile_response(y, y - X @ b, q, mu, smoothing)
            target = b.copy()
            target[pen] = prox.project_sparsity(b[pen], k).point
            return _solve(cache, scale * (X.T @ ytilde) + lam * target, b, scale, lam)

        return MMProblem(objective, argmin, name="sparse-quantile-pd")

    _log_start("sparse-quantile-pd", data, q=float(q), mu=float(mu), k=k)
    beta = _ols(cache, X, y)
    lam = sched.lambda_init
    history: List[float] = []
    anneal_path = []
    iterations = restarts = 0
    stage_result = None
    feasible = False
    for _ in range(sched.outer_max):
        stage_result = run_mm(build_problem(lam), beta, inner_opts)
        beta = stage_result.coef
        iterations += stage_result.iterations
        restarts += stage_result.restarts
        history.extend(stage_result.objective_history)
        dist = math.sqrt(prox.project_sparsity(beta[pen], k).squared_distance)
        anneal_path.append({
            "lambda": lam,
            "iterations": stage_result.iterations,
            "objective": stage_result.objective,
            "distance": dist,
        })
        logger.debug(f"[sparse-quantile-pd] lambda={lam:.4g} distance={dist:.3e}")
        if dist <= PROJECTION_TOL * max(float(np.linalg.norm(beta)), 1.0):
            feasible = True
            break
        if lam * sched.growth > sched.lambda_max:
            break
        lam *= sched.growth

    lam = anneal_path[-1]["lambda"]
    if not feasible:
        logger.warning(f"[sparse-quantile-pd] annealing stopped at lambda={lam:.4g} before reaching S_k")
    coef = beta.copy()
    coef[pen] = prox.project_sparsity(beta[pen], k).point
    result = FitResult(
        coef=coef,
        objective=quantile_objective(coef, X, y, q, mu, smoothing),
        iterations=iterations,
        converged=bool(stage_result.converged and feasible),
        objective_history=history,
        diagnostics=stage_result.diagnostics,
        factor_count=cache.factor_count,
        restarts=restarts,
        extras={
            "q": q,
            "mu": mu,
            "k": k,
            "smoothing": smoothing.value,
            "dense_coef": beta,
            "support": _support(data, coef),
            "lambda_final": lam,
            "anneal_path": anneal_path,
        },
    )
    _log_finish("sparse-quantile-pd", result)
    return result


def fit_sparse_quantile_pd_path(
    data: RegressionData,
    spec: QuantileSpec,
    ks: Sequence[int],
    sched: Optional[AnnealSchedule] = None,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
) -> List[FitResult]:
    """Proximal distance fits over a grid of sparsity levels sharing one spectral decomposition."""
    cache = cache or _spectral_cache(data.X, "sparse-quantile-pd")
    return [fit_sparse_quantile_pd(data, spec, int(k), sched, opts, cache=cache) for k in ks]


def fit_sparse_quantile_l0(
    data: RegressionData,
    spec: QuantileSpec,
    lam: float,
    alpha: float = DEFAULT_ALPHA,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
    init: Optional[np.ndarray] = None,
) -> FitResult:
    """
    Quantile regression penalized by lam * M_{alpha ||.||_0} on the non-intercept part.

    The envelope is majorized through prox_{alpha ||.||_0}(beta_m), giving the
    fixed shift lam/alpha; the returned dense minimizer comes with its sparse
    projection in extras["sparse_coef"].
    """
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}")
    opts = opts or MMOptions()
    X, y = data.X, data.y
    q, smoothing = spec.q, spec.smoothing
    mu = spec.mu or default_sparse_bandwidth(data.n, data.p, q)
    pen = data.penalized
    cache = cache or _spectral_cache(X, "sparse-quantile-l0")
    scale = _quantile_scale(data.n, mu, smoothing)
    shift = lam / alpha

    def objective(b):
        return l0_objective(b, X, y, q, mu, lam, alpha, pen, smoothing)

    def argmin(b):
        ytilde = _quantile_response(y, y - X @ b, q, mu, smoothing)
        target = b.copy()
        if b[pen].size:
            target[pen] = prox.prox_l0(b[pen], alpha).point
        return _solve(cache, scale * (X.T @ ytilde) + shift * target, b, scale, shift)

    problem = MMProblem(objective, argmin, name="sparse-quantile-l0")
    _log_start("sparse-quantile-l0", data, q=float(q), mu=float(mu), lam=float(lam), alpha=float(alpha))
    start = _ols(cache, X, y) if init is None else np.asarray(init, dtype=float)
    result = run_mm(problem, start, opts)
    result.factor_count = cache.factor_count

    sparse = result.coef.copy()
    envelope = 0.0
    if sparse[pen].size:
        projected = prox.prox_l0(result.coef[pen], alpha)
        sparse[pen] = projected.point
        envelope = projected.envelope_value
    result.extras.update({
        "q": q,
        "mu": mu,
        "lambda": lam,
        "alpha": alpha,
        "smoothing": smoothing.value,
        "sparse_coef": sparse,
        "support": _support(data, sparse),
        "envelope": envelope,
    })
    _log_finish("sparse-quantile-l0", result)
    return result


def fit_sparse_quantile_l0_path(
    data: RegressionData,
    spec: QuantileSpec,
    lambdas: Sequence[float],
    alpha: float = DEFAULT_ALPHA,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
) -> List[FitResult]:
    """Warm-started l0 fits over a lambda grid sharing one spectral decomposition."""
    cache = cache or _spectral_cache(data.X, "sparse-quantile-l0")
    results = []
    init = None
    for lam in lambdas:
        result = fit_sparse_quantile_l0(data, spec, float(lam), alpha, opts, cache=cache, init=init)
        init = result.coef
        results.append(result)
    return results


def fit_sparse_quantile(
    data: RegressionData,
    spec: QuantileSpec,
    penalty: SparsityPenalty,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
) -> FitResult:
    """Fit the sparse quantile model a SparsityPenalty describes: proximal distance to S_k or the l0 envelope."""
    if penalty.kind is SparsityPenaltyKind.PROX_DISTANCE:
        return fit_sparse_quantile_pd(data, spec, penalty.k, penalty.anneal, opts, cache)
    return fit_sparse_quantile_l0(data, spec, penalty.lambda_, penalty.alpha, opts, cache)


# L2E

def _tau_step(tau: float, r: np.ndarray, cap: float, name: str) -> float:
    """
    One backtracking gradient step on tau with the residuals held fixed.

    Starts from step length tau, halves up to MAX_HALVINGS times, and keeps
    tau (with a warning) when no step passes the Armijo test.
    """
    g = _l2e_tau_gradient(tau, r)
    if g == 0.0 or (g < 0 and tau >= cap):
        return tau
    f0 = _l2e_value(tau, r)
    step = tau
    for _ in range(MAX_HALVINGS):
        candidate = min(tau - step * g, cap)
        if candidate > 0 and _l2e_value(candidate, r) <= f0 + ARMIJO * g * (candidate - tau):
            return candidate
        step *= 0.5
    logger.warning(f"[{name}] tau line search stalled after {MAX_HALVINGS} halvings; keeping tau={tau:.6g}")
    return tau


def _l2e_extras(tau: float, r: np.ndarray) -> dict:
    outlyingness = 0.5 * (tau * r) ** 2
    return {"tau": tau, "weights": np.exp(-outlyingness), "outlyingness": outlyingness}


def fit_l2e(
    data: RegressionData,
    opts: Optional[MMOptions] = None,
    tau0: float = 1.0,
    cache: Optional[FactorCache] = None,
) -> FitResult:
    """
    L2E regression with a jointly estimated precision tau.

    Block descent on the packed parameter (beta, tau): a deweighted least
    squares step for beta with weights exp(-tau^2 r^2 / 2), then one
    backtracking gradient step for tau. The Cholesky factor of X'X serves
    every beta step.

    Args:
        data (RegressionData): Design and response.
        opts (MMOptions): Engine options.
        tau0 (float): Starting precision.
        cache (FactorCache): Reuse an existing Cholesky cache.

    Returns:
        FitResult: coef is beta; extras carry tau, the case weights and the
            outlyingness scores tau^2 r^2 / 2.
    """
    if tau0 <= 0:
        raise DomainError(f"tau0 must be positive, got {tau0}")
    opts = opts or MMOptions()
    X, y = data.X, data.y
    p = data.p
    cap = TAU_CAP_FACTOR * tau0
    cache = cache or _cholesky_cache(X, "l2e")

    def objective(theta):
        return l2e_objective(theta[:p], theta[p], X, y)

    def argmin(theta):
        b, tau = theta[:p], max(theta[p], TAU_MIN)
        fitted = X @ b
        w = np.exp(-0.5 * (tau * (y - fitted)) ** 2)
        b_new = _solve(cache, X.T @ deweight(y, fitted, w), b)
        tau_new = _tau_step(tau, y - X @ b_new, cap, "l2e")
        return np.append(b_new, tau_new)

    problem = MMProblem(objective, argmin, name="l2e")
    _log_start("l2e", data, tau0=float(tau0))
    result = run_mm(problem, np.append(_ols(cache, X, y), tau0), opts)
    theta = result.coef
    result.coef = theta[:p]
    result.factor_count = cache.factor_count
    result.extras.update(_l2e_extras(float(theta[p]), y - X @ theta[:p]))
    _log_finish("l2e", result)
    return result


def fit_isotonic_l2e(
    y,
    sched: Optional[AnnealSchedule] = None,
    opts: Optional[MMOptions] = None,
    pin_weights: bool = False,
) -> FitResult:
    """
    Robust isotonic regression: L2E with one location per observation and
    the penalty (lam/2) dist^2(D beta, R+) annealed toward feasibility.

    D takes adjacent differences. One eigendecomposition of D'D solves
    (s I + lam D'D) beta = s ytilde + lam D' P+(D beta_m) for every pair of
    s = tau^3 sqrt(2/pi) / n and lam. The fit starts at the pooled adjacent
    violators solution with tau0 = 1 / (1.4826 MAD) of its residuals; the
    schedule's lam is measured in units of s0 = s(tau0), and tau never
    exceeds 1e4 tau0.

    With pin_weights the weights stay at 1 and tau at 1, which turns the
    fit into penalized least squares isotonic regression.

    Args:
        y (array-like): Series of n >= 2 observations.
        sched (AnnealSchedule): Penalty schedule (relative to s0).
        opts (MMOptions): Inner engine options; sched.inner_tol overrides tol.
        pin_weights (bool): Disable robust weighting.

    Returns:
        FitResult: coef is the fitted series; extras carry tau, weights,
            outlyingness (-log w) and the annealing path.
    """
    sched = sched or AnnealSchedule()
    opts = opts or MMOptions()
    y = np.asarray(y, dtype=float).ravel()
    n = y.shape[0]
    if n < 2:
        raise DomainError(f"isotonic regression needs at least 2 observations, got {n}")
    if not np.all(np.isfinite(y)):
        raise InputError("response contains NaN or infinite values")
    name = "isotonic-l2e"
    span = float(np.ptp(y))

    D = np.diff(np.eye(n), axis=0)
    cache = build_gram_cache(D.T @ D, need_spectral=True, need_cholesky=False)

    if pin_weights:
        start = y.copy()
        tau0 = 1.0
    else:
        start = pava_fit(y)
        resid = y - start
        sigma = MAD_SCALE * float(np.median(np.abs(resid - np.median(resid))))
        if sigma <= 0:
            sigma = 1e-3 * span if span > 0 else 1.0
        tau0 = 1.0 / sigma
    s0 = tau0 ** 3 * SQRT_2_OVER_PI / n
    cap = TAU_CAP_FACTOR * tau0
    inner_opts = opts.model_copy(update={"tol": sched.inner_tol, "trace_path": None})

    def penalty_target(b):
        return D.T @ prox.project_orthant(np.diff(b)).point

    def build_problem(penalty: float) -> MMProblem:
        if pin_weights:
            def objective(b):
                dist2 = prox.project_orthant(np.diff(b)).squared_distance
                return 0.5 * s0 * float(np.sum((y - b) ** 2)) + 0.5 * penalty * dist2

            def argmin(b):
                return solve_ridge_spectral(cache, penalty, s0, s0 * y + penalty * penalty_target(b))

            return MMProblem(objective, argmin, name=name)

        def objective(theta):
            return isotonic_objective(theta[:n], theta[n], y, penalty)

        def argmin(theta):
            b, tau = theta[:n], max(theta[n], TAU_MIN)
            w = np.exp(-0.5 * (tau * (y - b)) ** 2)
            s = tau ** 3 * SQRT_2_OVER_PI / n
            rhs = s * deweight(y, b, w) + penalty * penalty_target(b)
            b_new = solve_ridge_spectral(cache, penalty, s, rhs)
            return np.append(b_new, _tau_step(tau, y - b_new, cap, name))

        return MMProblem(objective, argmin, name=name)

    logger.info(f"[{name}] fitting n={n}, tau0={tau0:.4g}, pinned={pin_weights}")
    theta = start if pin_weights else np.append(start, tau0)
    lam = sched.lambda_init
    history: List[float] = []
    anneal_path = []
    iterations = restarts = 0
    stage_result = None
    feasible = False
    for _ in range(sched.outer_max):
        penalty = lam * s0
        stage_result = run_mm(build_problem(penalty), theta, inner_opts)
        theta = stage_result.coef
        iterations += stage_result.iterations
        restarts += stage_result.restarts
        history.extend(stage_result.objective_history)
        violation = max(0.0, -float(np.min(np.diff(theta[:n]))))
        anneal_path.append({"lambda": lam, "iterations": stage_result.iterations, "violation": violation})
        if violation <= ISOTONIC_VIOLATION_TOL * max(span, np.finfo(float).tiny):
            feasible = True
            break
        if lam * sched.growth > sched.lambda_max:
            break
        lam *= sched.growth

    lam = anneal_path[-1]["lambda"]
    if not feasible:
        logger.warning(f"[{name}] annealing stopped at lambda={lam:.4g} with monotonicity violations")
    beta = theta[:n]
    tau = 1.0 if pin_weights else float(theta[n])
    extras = _l2e_extras(tau, y - beta)
    if pin_weights:
        extras["weights"] = np.ones(n)
    extras.update({
        "lambda_final": lam,
        "penalty": lam * s0,
        "pinned": pin_weights,
        "anneal_path": anneal_path,
    })
    result = FitResult(
        coef=beta,
        objective=stage_result.objective,
        iterations=iterations,
        converged=bool(stage_result.converged and feasible),
        objective_history=history,
        diagnostics=stage_result.diagnostics,
        factor_count=cache.factor_count,
        restarts=restarts,
        extras=extras,
    )
    _log_finish(name, result)
    return result


# GLMs

def separation_margin(B, X, Y) -> float:
    """
    Smallest gap between an observation's own category score and its best rival.

    Scores are the reference-coded logits [X B, 0]; Y is the n x (c-1)
    indicator matrix (a 0/1 column for logistic regression). A positive value
    means B classifies every observation correctly, so scaling B up drives
    the likelihood to 1 and no maximum-likelihood estimate exists.
    """
    B = np.asarray(B, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if B.ndim == 1:
        B, Y = B[:, None], Y[:, None]
    logits = _reference_logits(B, X)
    rows = np.arange(logits.shape[0])
    own = np.where(Y.sum(axis=1) > 0, np.argmax(Y, axis=1), logits.shape[1] - 1)
    own_score = logits[rows, own]
    logits[rows, own] = -np.inf
    return float(np.min(own_score - logits.max(axis=1)))


def _check_separation(name: str, B: np.ndarray, X: np.ndarray, Y: np.ndarray, certify: bool = True) -> None:
    """Raise NumericalError on runaway coefficients or, when certify is set, on a separating iterate."""
    norm = float(np.linalg.norm(B))
    if norm > SEPARATION_NORM:
        logger.error(f"[{name}] coefficient norm {norm:.3g} exceeded {SEPARATION_NORM:g}")
        raise NumericalError(
            f"{name} coefficients diverge (norm > {SEPARATION_NORM:g}); the classes are likely perfectly separated",
            snapshot=B,
        )
    if not certify:
        return
    margin = separation_margin(B, X, Y)
    if margin > SEPARATION_MARGIN:
        logger.error(f"[{name}] every observation is classified correctly with margin {margin:.3g}")
        raise NumericalError(
            f"{name} data are perfectly separated: the current coefficients classify every observation "
            f"correctly (margin {margin:.3g}), so the likelihood has no maximizer and the coefficients "
            "would diverge; drop the separating predictors or use a penalized model",
            snapshot=B,
        )


def logistic_step(beta, X, y, cache: FactorCache) -> np.ndarray:
    """One quadratic bound step beta + 4 (X'X)^-1 X'(y - w)."""
    return beta + 4.0 * solve_normal(cache, X.T @ (y - special.expit(X @ beta)))


def fit_logistic(
    data: RegressionData,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
) -> FitResult:
    """
    Logistic regression by the quadratic bound step (see logistic_step).

    Raises:
        NumericalError: If an iterate separates the two classes perfectly.
    """
    opts = opts or MMOptions()
    X, y = data.X, data.y
    if y.ndim != 1 or not np.all((y == 0) | (y == 1)):
        raise InputError("logistic regression needs a binary 0/1 response vector")
    cache = cache or _cholesky_cache(X, "logistic")

    def objective(b):
        return logistic_nll(b, X, y)

    def gradient(b):
        return -X.T @ (y - special.expit(X @ b))

    def argmin(b):
        b_new = logistic_step(b, X, y, cache)
        _check_separation("logistic", b_new, X, y)
        return b_new

    problem = MMProblem(objective, argmin, gradient=gradient, name="logistic")
    _log_start("logistic", data)
    result = run_mm(problem, np.zeros(data.p), opts)
    result.factor_count = cache.factor_count
    _log_finish("logistic", result)
    return result


def _check_indicators(Y: np.ndarray, c: int) -> None:
    if Y.ndim != 2 or Y.shape[1] != c - 1:
        raise InputError(f"multinomial response must be an n x {c - 1} indicator matrix")
    if not np.all((Y == 0) | (Y == 1)) or np.any(Y.sum(axis=1) > 1):
        raise InputError("multinomial indicator rows must be one-hot or all zero")


def fit_multinomial(
    data: RegressionData,
    c: int,
    opts: Optional[MMOptions] = None,
    cache: Optional[FactorCache] = None,
) -> FitResult:
    """
    Multinomial regression by the Boehning bound: B + (X'X)^-1 X'(Y - W) E^-1.

    data.y must be the n x (c-1) indicator matrix (see indicator_matrix).
    """
    opts = opts or MMOptions()
    X, Y = data.X, data.y
    _check_indicators(Y, c)
    _, E_inv = bohning_E(c)
    cache = cache or _cholesky_cache(X, "multinomial")

    def objective(B):
        return multinomial_nll(B, X, Y)

    def gradient(B):
        return -X.T @ (Y - multinomial_probs(B, X)[:, :-1])

    def argmin(B):
        B_new = B + solve_normal(cache, -gradient(B)) @ E_inv
        _check_separation("multinomial", B_new, X, Y)
        return B_new

    problem = MMProblem(objective, argmin, gradient=gradient, name="multinomial")
    _log_start("multinomial", data, c=c)
    result = run_mm(problem, np.zeros((data.p, c - 1)), opts)
    result.factor_count = cache.factor_count
    result.extras["c"] = c
    _log_finish("multinomial", result)
    return result


def _sylvester_factors(X: np.ndarray, c: int, name: str) -> SylvesterFactors:
    factors = build_sylvester_factors(X, c)
    gram_cache = _with_spectral_ridge(factors.gram_cache, name)
    if gram_cache is not factors.gram_cache:
        factors = replace(factors, gram_cache=gram_cache)
    return factors


def fit_lowrank_multinomial(
    data: RegressionData,
    c: int,
    lam: float,
    mu: float,
    opts: Optional[MMOptions] = None,
    factors: Optional[SylvesterFactors] = None,
    init: Optional[np.ndarray] = None,
) -> FitResult:
    """
    Multinomial regression penalized by lam * M_{mu ||.||_*}(B), intercept row excluded.

    Minimizes -(1/n) loglik(B) + lam M_{mu||.||_*}(B[1:]). Each iteration
    solves X'X D E + lam' D = X'(Y - W) + lam' (P_m - B_m) with lam' = n lam / mu,
    where P_m is B_m with its penalized rows replaced by their nuclear-norm
    prox. The two spectral decompositions in `factors` serve any lambda.

    Args:
        data (RegressionData): Design and n x (c-1) indicator response.
        c (int): Number of categories.
        lam (float): Nonnegative penalty constant.
        mu (float): Moreau smoothing constant of the nuclear norm.
        opts (MMOptions): Engine options.
        factors (SylvesterFactors): Reuse decompositions across a lambda path.
        init (np.ndarray): Starting coefficients (default zero).

    Returns:
        FitResult: coef is B; factor_count is that of `factors` (2).
    """
    if lam < 0:
        raise DomainError(f"lambda must be nonnegative, got {lam}")
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    opts = opts or MMOptions()
    X, Y = data.X, data.y
    _check_indicators(Y, c)
    factors = factors or _sylvester_factors(X, c, "lowrank-multinomial")
    pen = data.penalized
    lam_scaled = data.n * lam / mu

    def objective(B):
        return lowrank_objective(B, X, Y, lam, mu, pen)

    def argmin(B):
        G = X.T @ (Y - multinomial_probs(B, X)[:, :-1])
        if lam == 0:
            delta = solve_ridge_spectral(factors.gram_cache, 1.0, 0.0, G) @ factors.E_inv
        else:
            target = B.copy()
            if B[pen].size:
                target[pen] = prox.prox_nuclear(B[pen], mu).point
            delta = sylvester_solve(factors, lam_scaled, G + lam_scaled * (target - B))
        B_new = B + delta
        _check_separation("lowrank-multinomial", B_new, X, Y, certify=lam == 0)
        return B_new

    problem = MMProblem(objective, argmin, name="lowrank-multinomial")
    _log_start("lowrank-multinomial", data, c=c, lam=float(lam), mu=float(mu))
    start = np.zeros((data.p, c - 1)) if init is None else np.asarray(init, dtype=float)
    result = run_mm(problem, start, opts)
    result.factor_count = factors.factor_count
    singular = np.linalg.svd(result.coef[pen], compute_uv=False) if result.coef[pen].size else np.zeros(0)
    rank_tol = 1e-8 * max(float(singular[0]), 1.0) if singular.size else 0.0
    result.extras.update({
        "c": c,
        "lambda": lam,
        "mu": mu,
        "rank": int(np.sum(singular > rank_tol)),
    })
    _log_finish("lowrank-multinomial", result)
    return result


def fit_lowrank_multinomial_path(
    data: RegressionData,
    c: int,
    lambdas: Sequence[float],
    mu: float,
    opts: Optional[MMOptions] = None,
    factors: Optional[SylvesterFactors] = None,
) -> List[FitResult]:
    """Warm-started low-rank fits over a lambda grid sharing one SylvesterFactors."""
    factors = factors or _sylvester_factors(data.X, c, "lowrank-multinomial")
    results = []
    init = None
    for lam in lambdas:
        result = fit_lowrank_multinomial(data, c, float(lam), mu, opts, factors=factors, init=init)
        init = result.coef
        results.append(result)
    return results


# refactorize-per-iteration baselines

def _weighted_step(X: np.ndarray, y: np.ndarray, w: np.ndarray, name: str) -> np.ndarray:
    Xw = X * w[:, None]
    try:
        cache = build_gram_cache(X.T @ Xw)
    except FactorizationError:
        gram = X.T @ Xw
        cache = build_gram_cache(gram, default_ridge(gram))
        logger.warning(f"[{name}] weighted Gram matrix is singular; used ridge {cache.ridge_used:.3g}")
    return solve_normal(cache, Xw.T @ y)


def fit_lad_irls(
    data: RegressionData,
    mu: float,
    opts: Optional[MMOptions] = None,
    init: Optional[np.ndarray] = None,
) -> FitResult:
    """
    Same objective as fit_lad, solved by iteratively reweighted least squares.

    Weights 1 inside (-mu, mu) and mu/|r| outside; X'WX is refactorized every
    iteration, so factor_count equals the number of surrogate minimizations.
    """
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    opts = opts or MMOptions()
    X, y = data.X, data.y
    count = 0

    def argmin(b):
        nonlocal count
        count += 1
        return _weighted_step(X, y, sharp_lad_weights(y - X @ b, mu), "lad-irls")

    problem = MMProblem(lambda b: lad_objective(b, X, y, mu), argmin, name="lad-irls")
    _log_start("lad-irls", data, mu=float(mu))
    start = np.zeros(data.p) if init is None else np.asarray(init, dtype=float)
    result = run_mm(problem, start, opts)
    result.factor_count = count
    _log_finish("lad-irls", result)
    return result


def fit_l2e_irls(
    data: RegressionData,
    opts: Optional[MMOptions] = None,
    tau0: float = 1.0,
    init: Optional[np.ndarray] = None,
) -> FitResult:
    """L2E by block descent with a weighted least squares beta step refactorized each iteration."""
    if tau0 <= 0:
        raise DomainError(f"tau0 must be positive, got {tau0}")
    opts = opts or MMOptions()
    X, y = data.X, data.y
    p = data.p
    cap = TAU_CAP_FACTOR * tau0
    count = 0

    def argmin(theta):
        nonlocal count
        count += 1
        b, tau = theta[:p], max(theta[p], TAU_MIN)
        w = np.exp(-0.5 * (tau * (y - X @ b)) ** 2)
        b_new = _weighted_step(X, y, w, "l2e-irls")
        return np.append(b_new, _tau_step(tau, y - X @ b_new, cap, "l2e-irls"))

    problem = MMProblem(lambda t: l2e_objective(t[:p], t[p], X, y), argmin, name="l2e-irls")
    _log_start("l2e-irls", data, tau0=float(tau0))
    start = np.zeros(p) if init is None else np.asarray(init, dtype=float)
    result = run_mm(problem, np.append(start, tau0), opts)
    theta = result.coef
    result.coef = theta[:p]
    result.factor_count = count
    result.extras.update(_l2e_extras(float(theta[p]), y - X @ theta[:p]))
    _log_finish("l2e-irls", result)
    return result
