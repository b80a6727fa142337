"""
Factorization cache and the linear solvers built on it.

A FactorCache is built once per fit (or once per lambda path) and never
refactorized; every MM iteration only issues triangular or spectral solves
against it.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from logger_config import logger
from mmfit.exceptions import DomainError, FactorizationError, NumericalError, StateError

RIDGE_SCALE = 1e-8
PIVOT_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FactorCache:
    """
    Gram matrix with its Cholesky factor and/or eigendecomposition.

    Eigenvalues are stored in descending order and clamped at zero. The
    ridge is part of every solve: solve_normal factors gram + ridge*I and the
    spectral solves use eigenvalues shifted by the same ridge.
    """
    gram: np.ndarray
    ridge_used: float
    factor_count: int
    cholesky: Optional[np.ndarray] = None
    eigvals: Optional[np.ndarray] = None
    eigvecs: Optional[np.ndarray] = None

    @property
    def p(self) -> int:
        return self.gram.shape[0]

    @property
    def has_cholesky(self) -> bool:
        return self.cholesky is not None

    @property
    def has_spectral(self) -> bool:
        return self.eigvecs is not None


@dataclass(frozen=True)
class SylvesterFactors:
    """Spectral pair for X'X D E + lam D = C: eigensystems of X'X and of E^-1."""
    gram_cache: FactorCache
    einv_vals: np.ndarray
    einv_vecs: np.ndarray
    E: np.ndarray
    E_inv: np.ndarray
    c: int

    @property
    def factor_count(self) -> int:
        return self.gram_cache.factor_count + 1


def _freeze(arr: Optional[np.ndarray]) -> Optional[np.ndarray]:
    if arr is not None:
        arr.flags.writeable = False
    return arr


def default_ridge(gram: np.ndarray) -> float:
    """Fallback ridge 1e-8 * trace(gram) / p used when the Gram matrix is singular."""
    p = gram.shape[0]
    trace = float(np.trace(gram))
    return RIDGE_SCALE * trace / p if trace > 0 else RIDGE_SCALE


def build_gram_cache(
    gram: np.ndarray,
    ridge: float = 0.0,
    need_spectral: bool = False,
    need_cholesky: bool = True,
) -> FactorCache:
    """
    Factorize an already formed symmetric positive semidefinite matrix.

    Args:
        gram (np.ndarray): Symmetric p x p matrix.
        ridge (float): Nonnegative diagonal shift.
        need_spectral (bool): Compute the eigendecomposition.
        need_cholesky (bool): Compute the Cholesky factor of gram + ridge*I.

    Returns:
        FactorCache: Read-only cache; factor_count is the number of
            factorizations performed here.

    Raises:
        DomainError: If the matrix is not square and finite or ridge < 0.
        FactorizationError: If gram + ridge*I is not numerically positive definite.
        NumericalError: If the eigendecomposition fails.
    """
    gram = np.array(gram, dtype=float)
    if gram.ndim != 2 or gram.shape[0] != gram.shape[1] or gram.shape[0] < 1:
        raise DomainError(f"Gram matrix must be square, got shape {gram.shape}")
    if not np.all(np.isfinite(gram)):
        raise DomainError("Gram matrix contains non-finite entries")
    if ridge < 0 or not np.isfinite(ridge):
        raise DomainError(f"ridge must be a nonnegative number, got {ridge}")
    gram = 0.5 * (gram + gram.T)
    p = gram.shape[0]
    count = 0

    chol = None
    if need_cholesky:
        shifted = gram + ridge * np.eye(p)
        try:
            chol = linalg.cholesky(shifted, lower=True)
        except linalg.LinAlgError as e:
            logger.error(f"Cholesky factorization failed (p={p}, ridge={ridge:g}): {e}")
            raise FactorizationError(
                f"Gram matrix is not positive definite with ridge {ridge:g}; supply a larger ridge"
            ) from e
        max_diag = float(np.max(np.diag(shifted)))
        if np.min(np.diag(chol)) ** 2 <= PIVOT_TOLERANCE * max_diag:
            logger.error(f"Cholesky factor has a vanishing pivot (p={p}, ridge={ridge:g})")
            raise FactorizationError(
                f"Gram matrix is numerically singular with ridge {ridge:g}; supply a larger ridge"
            )
        count += 1

    eigvals = eigvecs = None
    if need_spectral:
        try:
            w, V = linalg.eigh(gram)
        except linalg.LinAlgError as e:
            logger.error(f"Eigendecomposition failed (p={p}): {e}")
            raise NumericalError(f"eigendecomposition did not converge: {e}", snapshot=gram) from e
        eigvals = np.maximum(w[::-1], 0.0)
        eigvecs = np.ascontiguousarray(V[:, ::-1])
        count += 1

    logger.debug(f"Built factor cache: p={p}, ridge={ridge:g}, factorizations={count}")
    return FactorCache(
        gram=_freeze(gram),
        ridge_used=float(ridge),
        factor_count=count,
        cholesky=_freeze(chol),
        eigvals=_freeze(eigvals),
        eigvecs=_freeze(eigvecs),
    )


def build_cache(
    X: np.ndarray,
    ridge: float = 0.0,
    need_spectral: bool = False,
    need_cholesky: bool = True,
) -> FactorCache:
    """Form X'X once and factorize it; see build_gram_cache."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
        raise DomainError(f"design must be a nonempty matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise DomainError("design matrix contains non-finite entries")
    return build_gram_cache(X.T @ X, ridge, need_spectral, need_cholesky)


def _check_rhs(cache: FactorCache, rhs) -> np.ndarray:
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape[0] != cache.p:
        raise DomainError(f"right-hand side has {rhs.shape[0]} rows, expected {cache.p}")
    return rhs


def solve_normal(cache: FactorCache, rhs) -> np.ndarray:
    """Solve (X'X + ridge*I) beta = rhs with the cached Cholesky factor; rhs may be a matrix."""
    if not cache.has_cholesky:
        raise StateError("factor cache holds no Cholesky factor")
    rhs = _check_rhs(cache, rhs)
    return linalg.cho_solve((cache.cholesky, True), rhs)


def solve_ridge_spectral(cache: FactorCache, scale: float, lam: float, rhs) -> np.ndarray:
    """
    Solve (scale * (X'X + ridge*I) + lam * I) beta = rhs from the cached eigensystem.

    Args:
        cache (FactorCache): Cache with a spectral factorization.
        scale (float): Positive multiplier of the Gram matrix.
        lam (float): Nonnegative diagonal shift; any value reuses the same cache.
        rhs (array-like): Vector of length p or p x m matrix.

    Returns:
        np.ndarray: Solution with the shape of rhs.

    Raises:
        StateError: If the cache has no eigendecomposition.
        NumericalError: If the shifted system is singular.
    """
    if not cache.has_spectral:
        raise StateError("factor cache holds no spectral decomposition")
    if scale <= 0:
        raise DomainError(f"scale must be positive, got {scale}")
    rhs = _check_rhs(cache, rhs)
    denom = scale * (cache.eigvals + cache.ridge_used) + lam
    if np.min(denom) <= 0:
        raise NumericalError(
            f"shifted spectral system is singular (scale={scale:g}, lambda={lam:g})"
        )
    U = cache.eigvecs
    coeffs = U.T @ rhs
    if coeffs.ndim == 1:
        return U @ (coeffs / denom)
    return U @ (coeffs / denom[:, None])


def curvature_bounds(cache: FactorCache, scale: float, shift: float) -> Tuple[float, float]:
    """Largest and smallest eigenvalue of scale * gram + shift * I."""
    if not cache.has_spectral:
        raise StateError("factor cache holds no spectral decomposition")
    vals = cache.eigvals + cache.ridge_used
    return scale * float(vals[0]) + shift, scale * float(vals[-1]) + shift


def largest_eigenvalue(cache: FactorCache) -> float:
    """
    Top eigenvalue of gram + ridge*I.

    Read off the spectral decomposition when the cache has one; otherwise only
    the top eigenvalue is computed. The cache and its factor_count are untouched.
    """
    if cache.has_spectral:
        return float(cache.eigvals[0]) + cache.ridge_used
    top = linalg.eigvalsh(cache.gram, subset_by_index=[cache.p - 1, cache.p - 1])
    return max(float(top[0]), 0.0) + cache.ridge_used


def bohning_E(c: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Boehning curvature bound for c categories and its closed-form inverse.

    E = (I - 11'/c) / 2 and E^-1 = 2 (I + 11'), both of size c - 1.
    """
    if c < 2:
        raise DomainError(f"category count must be at least 2, got {c}")
    m = c - 1
    ones = np.ones((m, m))
    E = 0.5 * (np.eye(m) - ones / c)
    E_inv = 2.0 * (np.eye(m) + ones)
    return E, E_inv


def build_sylvester_factors(X: np.ndarray, c: int, ridge: float = 0.0) -> SylvesterFactors:
    """
    Eigendecompose X'X and E^-1 once; every lambda on a path reuses them.

    Args:
        X (np.ndarray): n x p design.
        c (int): Number of categories.
        ridge (float): Diagonal shift added to X'X.

    Returns:
        SylvesterFactors: Two spectral decompositions (factor_count == 2).
    """
    E, E_inv = bohning_E(c)
    gram_cache = build_cache(X, ridge=ridge, need_spectral=True, need_cholesky=False)
    try:
        w, V = linalg.eigh(E_inv)
    except linalg.LinAlgError as e:
        logger.error(f"Eigendecomposition of the Boehning inverse failed (c={c}): {e}")
        raise NumericalError(f"eigendecomposition did not converge: {e}") from e
    return SylvesterFactors(
        gram_cache=gram_cache,
        einv_vals=_freeze(w),
        einv_vecs=_freeze(V),
        E=_freeze(E),
        E_inv=_freeze(E_inv),
        c=c,
    )


def sylvester_solve(factors: SylvesterFactors, lam: float, C) -> np.ndarray:
    """
    Solve X'X D E + lam D = C for the p x (c-1) matrix D.

    Right-multiplying by E^-1 gives X'X D + lam D E^-1 = C E^-1; in the two
    eigenbases the system is diagonal:
    z_ij = (U'CV)_ij s2_j / (s1_i + lam s2_j) and D = U Z V'.
    """
    if lam <= 0:
        raise DomainError(f"Sylvester solve requires lambda > 0, got {lam}")
    C = np.asarray(C, dtype=float)
    p = factors.gram_cache.p
    if C.shape != (p, factors.c - 1):
        raise DomainError(f"expected a {p}x{factors.c - 1} right-hand side, got shape {C.shape}")
    U = factors.gram_cache.eigvecs
    s1 = factors.gram_cache.eigvals + factors.gram_cache.ridge_used
    V = factors.einv_vecs
    s2 = factors.einv_vals
    Z = (U.T @ C @ V) * s2[None, :] / (s1[:, None] + lam * s2[None, :])
    return U @ Z @ V.T
