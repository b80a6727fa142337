"""
Generic majorization-minimization driver.

A fitter hands run_mm an MMProblem: the objective actually minimized and a
map from an anchor point to the minimizer of the surrogate anchored there.
The engine owns the descent loop, the relative-change stopping rule, the
restarted Nesterov acceleration, traces and convergence diagnostics.
"""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from logger_config import logger
from mmfit.exceptions import DegenerateError, DomainError, NumericalError, StateError
from models.mm_models import MMOptions

TRACE_COLUMNS = ["iter", "objective", "grad_norm", "restarted"]


@dataclass
class MMProblem:
    """
    Callbacks describing one MM instance.

    surrogate_value(beta, anchor) evaluates g(beta | anchor); it is only used
    by check_majorization. gradient, lipschitz_L and strong_mu feed the
    convergence diagnostics.
    """
    objective: Callable[[np.ndarray], float]
    surrogate_argmin: Callable[[np.ndarray], np.ndarray]
    surrogate_value: Optional[Callable[[np.ndarray, np.ndarray], float]] = None
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lipschitz_L: Optional[float] = None
    strong_mu: Optional[float] = None
    name: str = "mm"


@dataclass
class MMState:
    beta: np.ndarray
    beta_prev: np.ndarray
    iter: int = 0
    objective_history: List[float] = field(default_factory=list)
    nesterov_counter: int = 1
    restarts: int = 0


@dataclass
class ConvergenceDiagnostics:
    grad_norm_sq_sum: float = 0.0
    lipschitz_L: Optional[float] = None
    strong_mu: Optional[float] = None
    rate_bound_violations: int = 0
    grad_norms: List[float] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "grad_norm_sq_sum": self.grad_norm_sq_sum,
            "lipschitz_L": self.lipschitz_L,
            "strong_mu": self.strong_mu,
            "rate_bound_violations": self.rate_bound_violations,
        }


def _jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


@dataclass
class FitResult:
    coef: np.ndarray
    objective: float
    iterations: int
    converged: bool
    objective_history: List[float]
    diagnostics: ConvergenceDiagnostics
    factor_count: int = 0
    restarts: int = 0
    extras: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        """Plain-Python view of the result, ready for json.dump."""
        return {
            "coef": _jsonable(self.coef),
            "objective": float(self.objective),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "factorizations": int(self.factor_count),
            "restarts": int(self.restarts),
            "objective_history": [float(f) for f in self.objective_history],
            "diagnostics": self.diagnostics.to_dict(),
            "extras": _jsonable(self.extras),
        }


@dataclass
class RateBoundReport:
    contraction_factor: float
    geometric_violations: int
    grad_norm_sq_sum: float
    grad_sum_bound: float
    grad_sum_ok: bool


def nesterov_anchor(state: MMState) -> np.ndarray:
    """alpha = beta_m + (m-1)/(m+2) (beta_m - beta_{m-1}), m being the Nesterov counter."""
    m = state.nesterov_counter
    return state.beta + (m - 1.0) / (m + 2.0) * (state.beta - state.beta_prev)


def maybe_restart(state: MMState, f_new: float) -> bool:
    """
    Reset the momentum when a proposed step fails to descend.

    Ties count as descent. A non-finite proposal is treated as a failed step.

    Returns:
        bool: True when the counter was reset and the step must be recomputed
            from the current iterate.
    """
    if not state.objective_history:
        raise StateError("restart check needs at least one accepted objective value")
    if np.isfinite(f_new) and f_new <= state.objective_history[-1]:
        return False
    state.nesterov_counter = 1
    state.restarts += 1
    return True


def deweight(y, mu_current, w) -> np.ndarray:
    """
    Shifted responses w*y + (1-w)*mu_current of the deweighted surrogate.

    Unweighted least squares against these responses majorizes the weighted
    least squares problem up to a constant.

    Raises:
        DomainError: If any weight lies outside [0, 1] or the shapes differ.
    """
    y = np.asarray(y, dtype=float)
    mu_current = np.asarray(mu_current, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (y.shape == mu_current.shape == w.shape):
        raise DomainError(
            f"deweight needs equal shapes, got {y.shape}, {mu_current.shape}, {w.shape}"
        )
    if np.any(~np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
        raise DomainError("weights must lie in [0, 1]; rescale by the largest weight first")
    return w * y + (1.0 - w) * mu_current


def rescale_weights(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if np.any(~np.isfinite(w)) or np.any(w < 0):
        raise DomainError("weights must be finite and nonnegative")
    w_max = float(np.max(w)) if w.size else 0.0
    if w_max <= 0:
        raise DegenerateError("all weights are zero; the weighted problem is degenerate")
    return w / w_max


def sharp_lad_weights(r, mu: float) -> np.ndarray:
    """Weights of the best quadratic majorizer of the Huber loss: 1 inside (-mu, mu), mu/|r| outside."""
    if mu <= 0:
        raise DomainError(f"mu must be positive, got {mu}")
    a = np.abs(np.asarray(r, dtype=float))
    return np.where(a < mu, 1.0, mu / np.maximum(a, mu))


def _objective_value(problem: MMProblem, beta: np.ndarray) -> float:
    return float(problem.objective(beta))


def _write_trace(rows: List[Dict[str, Any]], path: str) -> None:
    pd.DataFrame(rows, columns=TRACE_COLUMNS).to_csv(path, index=False)
    logger.info(f"Wrote {len(rows)} trace rows to {path}")


def run_mm(problem: MMProblem, init, opts: Optional[MMOptions] = None) -> FitResult:
    """
    Iterate beta <- argmin g(. | anchor) until the relative objective change
    |f_m - f_{m-1}| / (|f_{m-1}| + 1) drops below opts.tol.

    With acceleration the anchor is the Nesterov extrapolation; a proposal
    that increases the objective is discarded and replaced in the same
    iteration by the plain step from the current iterate.

    Args:
        problem (MMProblem): Objective and surrogate minimizer.
        init (array-like): Starting parameter (vector or matrix).
        opts (MMOptions): Tolerance, iteration budget, acceleration, tracing.

    Returns:
        FitResult: Last iterate with its objective history. factor_count is
            left at 0 for the caller to fill in.

    Raises:
        NumericalError: If the objective is NaN or infinite at any iterate;
            the offending iterate is attached as a snapshot.
    """
    opts = opts or MMOptions()
    beta = np.array(init, dtype=float)
    f0 = _objective_value(problem, beta)
    if not np.isfinite(f0):
        logger.error(f"[{problem.name}] objective is not finite at the initial point")
        raise NumericalError("objective is not finite at the initial point", snapshot=beta)

    state = MMState(beta=beta, beta_prev=beta.copy(), objective_history=[f0])
    diag = ConvergenceDiagnostics(lipschitz_L=problem.lipschitz_L, strong_mu=problem.strong_mu)
    want_grad = problem.gradient is not None and (opts.trace_gradients or opts.trace_path)
    rows: List[Dict[str, Any]] = []

    def record(point: np.ndarray, f_val: float, restarted: bool) -> None:
        grad_norm = float("nan")
        if want_grad:
            grad_norm = float(np.linalg.norm(problem.gradient(point)))
            diag.grad_norms.append(grad_norm)
            diag.grad_norm_sq_sum += grad_norm ** 2
        rows.append({"iter": state.iter, "objective": f_val, "grad_norm": grad_norm, "restarted": restarted})

    record(beta, f0, False)
    converged = False
    try:
        for m in range(1, opts.max_iter + 1):
            state.iter = m
            restarted = False
            if opts.accelerate:
                candidate = problem.surrogate_argmin(nesterov_anchor(state))
                f_new = _objective_value(problem, candidate)
                if maybe_restart(state, f_new):
                    restarted = True
                    candidate = problem.surrogate_argmin(state.beta)
                    f_new = _objective_value(problem, candidate)
                else:
                    state.nesterov_counter += 1
            else:
                candidate = problem.surrogate_argmin(state.beta)
                f_new = _objective_value(problem, candidate)

            if not np.isfinite(f_new):
                logger.error(f"[{problem.name}] objective became {f_new} at iteration {m}")
                raise NumericalError(f"objective is not finite at iteration {m}", snapshot=candidate)

            f_prev = state.objective_history[-1]
            state.beta_prev, state.beta = state.beta, np.asarray(candidate, dtype=float)
            state.objective_history.append(f_new)
            record(state.beta, f_new, restarted)
            logger.debug(f"[{problem.name}] iter={m} objective={f_new:.12g} restarted={restarted}")

            if abs(f_new - f_prev) / (abs(f_prev) + 1.0) < opts.tol:
                converged = True
                break
    finally:
        if opts.trace_path:
            _write_trace(rows, opts.trace_path)

    if not converged and opts.max_iter > 0:
        logger.warning(f"[{problem.name}] stopped after {state.iter} iterations without converging")

    return FitResult(
        coef=state.beta,
        objective=state.objective_history[-1],
        iterations=state.iter,
        converged=converged,
        objective_history=state.objective_history,
        diagnostics=diag,
        restarts=state.restarts,
    )


@dataclass
class MajorizationReport:
    tangency_error: float
    worst_violation: float
    checks: int


def check_majorization(problem: MMProblem, anchors, points) -> MajorizationReport:
    """
    Evaluate the surrogate sandwich f(beta) <= g(beta | anchor), f(anchor) = g(anchor | anchor).

    Args:
        problem (MMProblem): Instance with a surrogate_value callback.
        anchors (iterable): Anchor points beta_m.
        points (iterable): Points beta compared against every anchor.

    Returns:
        MajorizationReport: Largest |g(a|a) - f(a)| and largest f(b) - g(b|a);
            the latter is <= 0 for a valid majorizer.

    Raises:
        DomainError: If the problem carries no surrogate_value.
    """
    if problem.surrogate_value is None:
        raise DomainError(f"{problem.name} has no surrogate_value to check")
    points = [np.asarray(b, dtype=float) for b in points]
    f_points = [_objective_value(problem, b) for b in points]
    tangency = 0.0
    worst = -np.inf
    checks = 0
    for anchor in anchors:
        anchor = np.asarray(anchor, dtype=float)
        tangency = max(tangency, abs(problem.surrogate_value(anchor, anchor) - _objective_value(problem, anchor)))
        for b, f_b in zip(points, f_points):
            worst = max(worst, f_b - problem.surrogate_value(b, anchor))
            checks += 1
    return MajorizationReport(tangency_error=tangency, worst_violation=float(worst), checks=checks)


def check_rate_bound(diag: ConvergenceDiagnostics, history: List[float], f_star: float) -> RateBoundReport:
    """
    Audit a finished run against the linear-rate and gradient-sum bounds.

    Counts iterations with f_m - f* > (1 - (mu/2L)^2)^m (f_0 - f*) and checks
    sum ||grad f(beta_k)||^2 <= 2 L (f_0 - f*). The violation count is also
    stored on diag.
    """
    if diag.lipschitz_L is None or diag.strong_mu is None:
        raise DomainError("rate bound audit needs both lipschitz_L and strong_mu")
    if not history:
        raise DomainError("rate bound audit needs a nonempty objective history")
    f0 = history[0]
    slack = 1e-12 * (1.0 + abs(f0))
    if f_star > min(history) + slack:
        raise DomainError(f"f_star={f_star} exceeds the smallest recorded objective {min(history)}")

    L, mu = diag.lipschitz_L, diag.strong_mu
    factor = 1.0 - (mu / (2.0 * L)) ** 2
    gap0 = f0 - f_star
    violations = sum(
        1 for m, f_m in enumerate(history) if f_m - f_star > factor ** m * gap0 + slack
    )
    diag.rate_bound_violations = violations
    bound = 2.0 * L * gap0
    return RateBoundReport(
        contraction_factor=factor,
        geometric_violations=violations,
        grad_norm_sq_sum=diag.grad_norm_sq_sum,
        grad_sum_bound=bound,
        grad_sum_ok=diag.grad_norm_sq_sum <= bound + slack,
    )
