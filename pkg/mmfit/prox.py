"""
Proximal maps and Moreau envelopes used to build every MM surrogate.

Scalar maps are vectorized: they accept a float or an array of residuals and
return the same shape (0-d results come back as numpy scalars).
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg

from logger_config import logger
from mmfit.exceptions import DomainError, NumericalError
from models.mm_models import (
    MatrixProxKind,
    MatrixProxSpec,
    ScalarProxKind,
    ScalarProxSpec,
    VectorProxKind,
    VectorProxSpec,
)


@dataclass(frozen=True)
class ProxResult:
    """Proximal point together with the envelope value at the input.

    `squared_distance` is only set for set projections (sparsity, rank,
    orthant); `envelope_value` is then squared_distance / (2 mu).
    """
    point: np.ndarray
    envelope_value: float
    squared_distance: Optional[float] = None


def _check_mu(mu: float) -> None:
    if not np.isfinite(mu) or mu <= 0:
        raise DomainError(f"smoothing constant mu must be positive and finite, got {mu}")


def _check_q(q: float) -> None:
    if not 0 < q < 1:
        raise DomainError(f"quantile level q must lie in (0, 1), got {q}")


def _finite(values) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("input to a proximal map must be finite")
    return arr


def prox_abs(r, mu: float):
    """Soft threshold (1 - mu / max(|r|, mu)) * r."""
    _check_mu(mu)
    r = _finite(r)
    return (r * (1.0 - mu / np.maximum(np.abs(r), mu)))[()]


def moreau_abs(r, mu: float):
    """Huber function: the Moreau envelope of |.| with parameter mu."""
    _check_mu(mu)
    r = _finite(r)
    a = np.abs(r)
    return np.where(a <= mu, r * r / (2.0 * mu), a - mu / 2.0)[()]


def check_loss(r, q: float):
    _check_q(q)
    r = np.asarray(r, dtype=float)
    return ((q - 0.5) * r + 0.5 * np.abs(r))[()]


def prox_check(r, mu: float, q: float):
    """Three-piece prox of mu * rho_q: shift by q*mu above, (1-q)*mu below, zero between."""
    _check_mu(mu)
    _check_q(q)
    r = _finite(r)
    upper = q * mu
    lower = -(1.0 - q) * mu
    return np.where(r >= upper, r - upper, np.where(r <= lower, r - lower, 0.0))[()]


def moreau_check(r, mu: float, q: float):
    _check_mu(mu)
    _check_q(q)
    r = _finite(r)
    upper = q * mu
    lower = -(1.0 - q) * mu
    return np.where(
        r >= upper,
        q * r - mu * q * q / 2.0,
        np.where(
            r <= lower,
            -(1.0 - q) * r - mu * (1.0 - q) ** 2 / 2.0,
            r * r / (2.0 * mu),
        ),
    )[()]


def conv_smoothed_abs(r, mu: float):
    """Uniform-kernel convolution smoothing of |.|, equal to the Huber envelope plus mu/2."""
    return (np.asarray(moreau_abs(r, mu)) + mu / 2.0)[()]


def prox_l0(beta, mu: float) -> ProxResult:
    """
    Hard threshold of mu * ||beta||_0.

    A coordinate survives when beta_j^2 / 2 >= mu; the boundary case is kept.

    Args:
        beta (array-like): Input vector.
        mu (float): Positive smoothing constant.

    Returns:
        ProxResult: Thresholded vector and the envelope
            sum_j [1 if kept else beta_j^2 / (2 mu)].
    """
    _check_mu(mu)
    beta = _finite(beta)
    keep = 0.5 * beta * beta >= mu
    point = np.where(keep, beta, 0.0)
    envelope = float(np.sum(np.where(keep, 1.0, beta * beta / (2.0 * mu))))
    return ProxResult(point=point, envelope_value=envelope)


def project_sparsity(beta, k: int, mu: float = 1.0) -> ProxResult:
    """
    Project onto S_k, the vectors with at most k nonzero entries.

    The k largest magnitudes are kept; among equal magnitudes the lower index
    wins.

    Args:
        beta (array-like): Input vector of length p.
        k (int): Sparsity level, 0 <= k <= p.
        mu (float): Scale of the reported envelope value.

    Returns:
        ProxResult: Projection, squared distance and squared_distance / (2 mu).

    Raises:
        DomainError: If k is negative or exceeds p.
    """
    _check_mu(mu)
    beta = _finite(beta)
    p = beta.shape[0]
    if k < 0 or k > p:
        raise DomainError(f"sparsity level k must satisfy 0 <= k <= {p}, got {k}")
    order = np.argsort(-np.abs(beta), kind="stable")
    point = np.zeros_like(beta)
    kept = order[:k]
    point[kept] = beta[kept]
    dropped = beta[order[k:]]
    sqdist = float(np.sum(dropped * dropped))
    return ProxResult(point=point, envelope_value=sqdist / (2.0 * mu), squared_distance=sqdist)


def project_orthant(v) -> ProxResult:
    v = _finite(v)
    point = np.maximum(v, 0.0)
    sqdist = float(np.sum(np.minimum(v, 0.0) ** 2))
    return ProxResult(point=point, envelope_value=sqdist / 2.0, squared_distance=sqdist)


def _thin_svd(B: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    B = _finite(B)
    if B.ndim != 2:
        raise DomainError(f"expected a matrix, got an array with {B.ndim} dimensions")
    try:
        return linalg.svd(B, full_matrices=False)
    except linalg.LinAlgError as e:
        logger.error(f"SVD failed on a {B.shape[0]}x{B.shape[1]} matrix: {e}")
        raise NumericalError(f"SVD did not converge: {e}", snapshot=B) from e


def project_rank(B, k: int, mu: float = 1.0) -> ProxResult:
    """Eckart-Young truncation to the top-k singular values."""
    _check_mu(mu)
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise DomainError(f"expected a matrix, got an array with {B.ndim} dimensions")
    if k < 0 or k > min(B.shape):
        raise DomainError(f"rank k must satisfy 0 <= k <= {min(B.shape)}, got {k}")
    U, s, Vt = _thin_svd(B)
    kept = s.copy()
    kept[k:] = 0.0
    sqdist = float(np.sum(s[k:] ** 2))
    return ProxResult(point=(U * kept) @ Vt, envelope_value=sqdist / (2.0 * mu), squared_distance=sqdist)


def prox_nuclear(B, mu: float) -> ProxResult:
    _check_mu(mu)
    U, s, Vt = _thin_svd(B)
    shrunk = np.maximum(s - mu, 0.0)
    envelope = float(np.sum(shrunk) + np.sum((s - shrunk) ** 2) / (2.0 * mu))
    return ProxResult(point=(U * shrunk) @ Vt, envelope_value=envelope)


def prox_rank_fn(B, mu: float) -> ProxResult:
    """Hard threshold of the singular values, mu * rank(B); the boundary case is kept."""
    _check_mu(mu)
    U, s, Vt = _thin_svd(B)
    keep = 0.5 * s * s >= mu
    kept = np.where(keep, s, 0.0)
    envelope = float(np.sum(np.where(keep, 1.0, s * s / (2.0 * mu))))
    return ProxResult(point=(U * kept) @ Vt, envelope_value=envelope)


def prox_scalar(spec: ScalarProxSpec, r) -> ProxResult:
    """
    Dispatch a scalar prox spec over a residual vector.

    Args:
        spec (ScalarProxSpec): Abs or Check with its smoothing constant.
        r (array-like): Residuals.

    Returns:
        ProxResult: Entrywise prox and the summed envelope.
    """
    if spec.kind is ScalarProxKind.ABS:
        point = prox_abs(r, spec.mu)
        envelope = moreau_abs(r, spec.mu)
    else:
        point = prox_check(r, spec.mu, spec.q)
        envelope = moreau_check(r, spec.mu, spec.q)
    return ProxResult(point=np.asarray(point), envelope_value=float(np.sum(envelope)))


def prox_vector(spec: VectorProxSpec, beta) -> ProxResult:
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (spec.p,):
        raise DomainError(f"expected a vector of length {spec.p}, got shape {beta.shape}")
    if spec.kind is VectorProxKind.L0_NORM:
        return prox_l0(beta, spec.mu)
    return project_sparsity(beta, spec.k, spec.mu or 1.0)


def prox_matrix(spec: MatrixProxSpec, B) -> ProxResult:
    B = np.asarray(B, dtype=float)
    if B.shape != (spec.rows, spec.cols):
        raise DomainError(f"expected a {spec.rows}x{spec.cols} matrix, got shape {B.shape}")
    if spec.kind is MatrixProxKind.RANK_SET:
        return project_rank(B, spec.k, spec.mu or 1.0)
    if spec.kind is MatrixProxKind.RANK_FUNCTION:
        return prox_rank_fn(B, spec.mu)
    return prox_nuclear(B, spec.mu)


def lipschitz_constant(spec: ScalarProxSpec) -> float:
    if spec.kind is ScalarProxKind.ABS:
        return 1.0
    return max(spec.q, 1.0 - spec.q)
