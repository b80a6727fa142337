import argparse
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

import numpy as np

from logger_config import logger
from cli.commands.fit import (
    DEFAULT_LOWRANK_MU,
    add_model_arguments,
    config_echo,
    config_from_args,
    load_data,
    quantile_spec,
    run_model,
)
from mmfit import estimators, prox
from mmfit.estimators import RegressionData
from mmfit.exceptions import InputError
from mmfit.simdata import make_rng
from mmfit.utils import build_report, write_json, write_table
from models.mm_models import FitConfig, ModelName

# hyperparameter each model is cross-validated over
CV_PARAMETERS = {
    ModelName.SPARSE_QUANTILE_L0: "lambda",
    ModelName.SPARSE_QUANTILE_PD: "k",
    ModelName.LOWRANK_MULTINOMIAL: "lambda",
}
MAX_K_GRID = 50
TABLE_COLUMNS = ["value", "mean_loss", "sd_loss", "mean_envelope"]


def build_grid(args: argparse.Namespace, model: ModelName, penalized: int) -> List[float]:
    """
    Explicit --grid values, else k = 1..min(50, p) for the proximal distance
    model and a log-spaced lambda grid otherwise. Returned in ascending order.
    """
    if args.grid:
        try:
            values = [float(v) for v in args.grid.split(",") if v.strip()]
        except ValueError as e:
            raise InputError(f"--grid must be a comma separated list of numbers: {e}") from e
    elif model is ModelName.SPARSE_QUANTILE_PD:
        values = list(range(1, min(MAX_K_GRID, penalized) + 1))
    else:
        if args.grid_min <= 0 or args.grid_max < args.grid_min:
            raise InputError("lambda grid needs 0 < --grid-min <= --grid-max")
        values = np.logspace(math.log10(args.grid_min), math.log10(args.grid_max), args.grid_count).tolist()
    if not values:
        raise InputError("the cross-validation grid is empty")
    if model is ModelName.SPARSE_QUANTILE_PD:
        if any(v != int(v) or v < 0 for v in values):
            raise InputError("k grid values must be nonnegative integers")
        values = [int(v) for v in values]
    elif any(v < 0 for v in values):
        raise InputError("lambda grid values must be nonnegative")
    return sorted(set(values))


def assign_folds(n: int, folds: int, seed: int) -> np.ndarray:
    """Fold label of every observation from a seeded permutation; fold sizes differ by at most one."""
    if folds < 2:
        raise InputError(f"--folds must be at least 2, got {folds}")
    if folds > n:
        raise InputError(f"--folds={folds} exceeds the number of observations n={n}")
    labels = np.empty(n, dtype=int)
    labels[make_rng(seed, "folds").permutation(n)] = np.arange(n) % folds
    return labels


def check_loss(beta, X, y, q: float) -> float:
    return float(np.mean(prox.check_loss(y - X @ beta, q)))


def fold_losses(config: FitConfig, data: RegressionData, c: Optional[int], grid, labels, fold: int) -> Dict[str, List[float]]:
    """Fit the whole grid on the training part of one fold and score the held-out part."""
    train = labels != fold
    train_data = RegressionData(data.X[train], data.y[train], intercept=data.intercept)
    X_test, y_test = data.X[~train], data.y[~train]
    model = config.model
    logger.info(f"CV fold {fold}: training n={train_data.n}, held out {X_test.shape[0]}")

    if model is ModelName.SPARSE_QUANTILE_L0:
        results = estimators.fit_sparse_quantile_l0_path(
            train_data, quantile_spec(config), grid, config.alpha, config.opts
        )
        return {
            "loss": [check_loss(r.extras["sparse_coef"], X_test, y_test, config.q) for r in results],
            "envelope": [float(r.extras["envelope"]) for r in results],
        }
    if model is ModelName.SPARSE_QUANTILE_PD:
        results = estimators.fit_sparse_quantile_pd_path(
            train_data, quantile_spec(config), grid, config.anneal, config.opts
        )
        return {"loss": [check_loss(r.coef, X_test, y_test, config.q) for r in results]}

    results = estimators.fit_lowrank_multinomial_path(
        train_data, c, grid, config.mu or DEFAULT_LOWRANK_MU, config.opts
    )
    return {"loss": [-estimators.multinomial_loglik(r.coef, X_test, y_test) / X_test.shape[0] for r in results]}


def cmd_cv(args: argparse.Namespace) -> int:
    model = ModelName(args.model)
    if model not in CV_PARAMETERS:
        raise InputError(
            f"cross-validation supports {[m.value for m in CV_PARAMETERS]}, not '{model.value}'"
        )
    # the grid stands in for the hyperparameter being tuned
    placeholder = {"k": args.k if args.k is not None else 0}
    if args.lambda_ is None:
        placeholder["lambda_"] = 0.0
    config = config_from_args(args, **placeholder)
    data, c = load_data(config)
    parameter = CV_PARAMETERS[model]
    penalized = data.p - 1 if data.intercept else data.p
    grid = build_grid(args, model, penalized)
    labels = assign_folds(data.n, args.folds, config.seed)
    logger.info(f"Cross-validating {model.value} over {len(grid)} {parameter} values with {args.folds} folds")

    def run_fold(fold: int):
        return fold_losses(config, data, c, grid, labels, fold)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            per_fold = list(pool.map(run_fold, range(args.folds)))
    else:
        per_fold = [run_fold(fold) for fold in range(args.folds)]

    losses = np.array([f["loss"] for f in per_fold])
    mean_loss = losses.mean(axis=0)
    sd_loss = losses.std(axis=0, ddof=1)
    envelopes = None
    if "envelope" in per_fold[0]:
        envelopes = np.array([f["envelope"] for f in per_fold]).mean(axis=0)
    best = int(np.argmin(mean_loss))
    best_value = grid[best]
    logger.info(f"Selected {parameter}={best_value} with mean validation loss {mean_loss[best]:.6g}")

    rows = [
        {
            "value": value,
            "mean_loss": float(mean_loss[i]),
            "sd_loss": float(sd_loss[i]),
            "mean_envelope": float(envelopes[i]) if envelopes is not None else None,
        }
        for i, value in enumerate(grid)
    ]
    table_path = args.table or (os.path.splitext(args.output)[0] + "_table.csv" if args.output else None)
    if table_path:
        write_table(table_path, rows, TABLE_COLUMNS)

    update = {"k": best_value} if parameter == "k" else {"lambda_": best_value}
    final_config = config.model_copy(update=update)
    result = run_model(final_config, data, c)
    report = build_report(model, result, config_echo(final_config))
    summary = {
        "schema": 1,
        "model": model.value,
        "parameter": parameter,
        "folds": args.folds,
        "seed": config.seed,
        "best": best_value,
        "best_loss": float(mean_loss[best]),
        "grid": rows,
        "fit": report.model_dump(mode="json", by_alias=True),
    }
    if args.output:
        write_json(args.output, summary)
    else:
        print(json.dumps(summary, indent=2))
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("cv", help="k-fold cross-validation over a penalty grid")
    add_model_arguments(parser)
    parser.add_argument("--folds", type=int, default=5)
    parser.add_argument("--grid", help="comma separated grid values")
    parser.add_argument("--grid-count", type=int, default=50)
    parser.add_argument("--grid-min", type=float, default=1e-4)
    parser.add_argument("--grid-max", type=float, default=1.0)
    parser.add_argument("--table", help="per-grid CSV table path")
    parser.add_argument("--jobs", type=int, default=1, help="folds evaluated concurrently")
    parser.set_defaults(func=cmd_cv)
