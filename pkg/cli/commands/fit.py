import argparse
import os
import time
from typing import Any, Dict, Optional, Tuple

import numpy as np

from logger_config import logger
from mmfit import estimators
from mmfit.estimators import RegressionData
from mmfit.exceptions import ConvergenceError, InputError
from mmfit.mmengine import FitResult
from mmfit.utils import build_report, read_design_csv, read_report, write_report
from models.mm_models import (
    AnnealSchedule,
    FitConfig,
    FitReport,
    MMOptions,
    ModelName,
    QuantileSmoothing,
    QuantileSpec,
)

DEFAULT_LOWRANK_MU = 0.01


def default_seed() -> int:
    return int(os.getenv("MMFIT_SEED", "0"))


def add_model_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags shared by `fit` and `cv`; they mirror the FitConfig fields."""
    parser.add_argument("model", choices=[m.value for m in ModelName])
    parser.add_argument("--data", required=True, help="CSV with a header row")
    parser.add_argument("--output", help="result JSON path (stdout when omitted)")
    parser.add_argument("--response", default="y")
    parser.add_argument("--no-intercept", dest="intercept", action="store_false")
    parser.add_argument("--q", type=float)
    parser.add_argument("--mu", type=float)
    parser.add_argument("--k", type=int)
    parser.add_argument("--lambda", dest="lambda_", type=float)
    parser.add_argument("--alpha", type=float, default=estimators.DEFAULT_ALPHA)
    parser.add_argument("--c", type=int, help="number of categories (default: largest code)")
    parser.add_argument("--smoothing", choices=[s.value for s in QuantileSmoothing],
                        default=QuantileSmoothing.CONVOLUTION.value)
    parser.add_argument("--seed", type=int, default=default_seed())
    parser.add_argument("--tol", type=float, default=1e-6)
    parser.add_argument("--max-iter", type=int, default=10000)
    parser.add_argument("--accelerate", action="store_true")
    parser.add_argument("--lambda-init", type=float, default=1.0)
    parser.add_argument("--growth", type=float, default=1.2)
    parser.add_argument("--lambda-max", type=float, default=1e8)
    parser.add_argument("--inner-tol", type=float, default=1e-6)
    parser.add_argument("--outer-max", type=int, default=200)


def config_from_args(args: argparse.Namespace, **overrides) -> FitConfig:
    """Build and validate a FitConfig; raises pydantic.ValidationError on bad flags."""
    fields = {
        "model": args.model,
        "data": args.data,
        "output": args.output,
        "response": args.response,
        "intercept": args.intercept,
        "q": args.q,
        "mu": args.mu,
        "k": args.k,
        "lambda_": args.lambda_,
        "alpha": args.alpha,
        "c": args.c,
        "smoothing": args.smoothing,
        "seed": args.seed,
        "anneal": AnnealSchedule(
            lambda_init=args.lambda_init,
            growth=args.growth,
            lambda_max=args.lambda_max,
            inner_tol=args.inner_tol,
            outer_max=args.outer_max,
        ),
        "opts": MMOptions(
            tol=args.tol,
            max_iter=args.max_iter,
            accelerate=args.accelerate,
            trace_path=getattr(args, "trace", None),
        ),
    }
    fields.update(overrides)
    return FitConfig(**fields)


def prepare_response(config: FitConfig, y: np.ndarray) -> Tuple[np.ndarray, Optional[int]]:
    """Turn the CSV response into what the model consumes: codes become indicators for multinomial models."""
    if config.model in (ModelName.MULTINOMIAL, ModelName.LOWRANK_MULTINOMIAL):
        c = config.c or int(np.max(y))
        if c < 2:
            raise InputError("multinomial models need at least 2 categories")
        return estimators.indicator_matrix(y, c), c
    return y, None


def load_data(config: FitConfig) -> Tuple[RegressionData, Optional[int]]:
    X, y, _ = read_design_csv(config.data, config.response, config.intercept)
    response, c = prepare_response(config, y)
    return RegressionData(X, response, intercept=config.intercept), c


def quantile_spec(config: FitConfig) -> QuantileSpec:
    return QuantileSpec(q=config.q, mu=config.mu, smoothing=config.smoothing)


def run_model(config: FitConfig, data: RegressionData, c: Optional[int] = None) -> FitResult:
    """Dispatch a validated configuration to its fitter."""
    model = config.model
    opts = config.opts
    if model is ModelName.LAD:
        mu = config.mu or estimators.default_quantile_bandwidth(data.n, data.p)
        return estimators.fit_lad(data, mu, opts)
    if model is ModelName.QUANTILE:
        return estimators.fit_quantile(data, quantile_spec(config), opts)
    if model in (ModelName.SPARSE_QUANTILE_PD, ModelName.SPARSE_QUANTILE_L0):
        return estimators.fit_sparse_quantile(data, quantile_spec(config), config.sparsity_penalty(), opts)
    if model is ModelName.L2E:
        return estimators.fit_l2e(data, opts)
    if model is ModelName.ISOTONIC_L2E:
        return estimators.fit_isotonic_l2e(data.y, config.anneal, opts)
    if model is ModelName.LOGISTIC:
        return estimators.fit_logistic(data, opts)
    if model is ModelName.MULTINOMIAL:
        return estimators.fit_multinomial(data, c, opts)
    return estimators.fit_lowrank_multinomial(data, c, config.lambda_, config.mu or DEFAULT_LOWRANK_MU, opts)


def rescore(report: FitReport, data: RegressionData) -> float:
    """
    Recompute the objective a report claims from its coefficients and extras.

    Args:
        report (FitReport): Report produced by `fit`.
        data (RegressionData): The data it was fitted on.

    Returns:
        float: Objective value at the reported coefficients.
    """
    coef = np.asarray(report.coef, dtype=float)
    X, y = data.X, data.y
    extras = report.extras
    model = report.model
    if model is ModelName.LAD:
        return estimators.lad_objective(coef, X, y, extras["mu"])
    if model in (ModelName.QUANTILE, ModelName.SPARSE_QUANTILE_PD):
        smoothing = QuantileSmoothing(extras["smoothing"])
        return estimators.quantile_objective(coef, X, y, extras["q"], extras["mu"], smoothing)
    if model is ModelName.SPARSE_QUANTILE_L0:
        smoothing = QuantileSmoothing(extras["smoothing"])
        return estimators.l0_objective(
            coef, X, y, extras["q"], extras["mu"], extras["lambda"], extras["alpha"], data.penalized, smoothing
        )
    if model is ModelName.L2E:
        return estimators.l2e_objective(coef, extras["tau"], X, y)
    if model is ModelName.ISOTONIC_L2E:
        return estimators.isotonic_objective(coef, extras["tau"], y, extras["penalty"])
    if model is ModelName.LOGISTIC:
        return estimators.logistic_nll(coef, X, y)
    if model is ModelName.MULTINOMIAL:
        return estimators.multinomial_nll(coef, X, y)
    return estimators.lowrank_objective(coef, X, y, extras["lambda"], extras["mu"], data.penalized)


def config_echo(config: FitConfig) -> Dict[str, Any]:
    echo = config.model_dump(mode="json", by_alias=True)
    echo["opts"].pop("trace_path", None)
    return echo


def emit_report(report: FitReport, path: Optional[str]) -> None:
    if path:
        write_report(path, report)
    else:
        print(report.model_dump_json(by_alias=True, indent=2))


def cmd_fit(args: argparse.Namespace) -> int:
    if args.rescore:
        return cmd_rescore(args)
    config = config_from_args(args)
    data, c = load_data(config)
    logger.info(f"Fitting {config.model.value} on {config.data}")
    start = time.perf_counter()
    result = run_model(config, data, c)
    elapsed = time.perf_counter() - start
    report = build_report(config.model, result, config_echo(config), time_seconds=elapsed)
    emit_report(report, config.output)
    if not result.converged:
        raise ConvergenceError(
            f"{config.model.value} did not converge in {result.iterations} iterations; the report was still written"
        )
    return 0


def cmd_rescore(args: argparse.Namespace) -> int:
    report = read_report(args.rescore)
    config = FitConfig(**{**report.config, "data": args.data, "output": None, "model": report.model})
    data, _ = load_data(config)
    value = rescore(report, data)
    gap = abs(value - report.objective)
    logger.info(f"Rescored {args.rescore}: objective={value:.15g}, reported={report.objective:.15g}, gap={gap:.3g}")
    print(f"{value:.17g}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("fit", help="fit one model to a CSV file")
    add_model_arguments(parser)
    parser.add_argument("--trace", help="write the per-iteration trace CSV to this path")
    parser.add_argument("--rescore", metavar="REPORT",
                        help="recompute the objective of an existing report instead of fitting")
    parser.set_defaults(func=cmd_fit)
