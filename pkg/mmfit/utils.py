import json
import os
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from logger_config import logger
from mmfit.exceptions import InputError
from mmfit.mmengine import FitResult
from models.mm_models import FitReport, MetricsReport, ModelName


def read_design_csv(path: str, response: str = "y", intercept: bool = True) -> Tuple[np.ndarray, np.ndarray, List[str]]:
    """
    Reads a CSV with a header row into a design matrix and a response vector.

    Every column except the response becomes a predictor, in file order.
    With intercept=True a leading column of ones is prepended unless the
    first predictor already is one.

    Args:
        path (str): CSV file path.
        response (str): Name of the response column.
        intercept (bool): Whether the model has an unpenalized intercept.

    Returns:
        Tuple[np.ndarray, np.ndarray, List[str]]: X, y and the coefficient names.

    Raises:
        FileNotFoundError: If the file does not exist.
        InputError: If the file cannot be parsed, the response column is
            missing, or any value is non-numeric or missing.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"data file not found: {path}")
    try:
        df = pd.read_csv(path)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        logger.error(f"Error reading {path}: {e}")
        raise InputError(f"could not parse CSV {path}: {e}") from e

    if response not in df.columns:
        raise InputError(f"response column '{response}' not found in {path}; columns are {list(df.columns)}")
    numeric = df.apply(pd.to_numeric, errors="coerce")
    bad = [col for col in df.columns if numeric[col].isna().any()]
    if bad:
        logger.error(f"Non-numeric or missing values in {path}, columns {bad}")
        raise InputError(f"CSV {path} has missing or non-numeric values in columns {bad}")

    y = numeric[response].to_numpy(dtype=float)
    predictors = numeric.drop(columns=[response])
    X = predictors.to_numpy(dtype=float)
    names = [str(col) for col in predictors.columns]
    if intercept and not (X.shape[1] > 0 and np.all(X[:, 0] == 1.0)):
        X = np.hstack([np.ones((X.shape[0], 1)), X])
        names = ["(intercept)"] + names
    if X.shape[1] == 0:
        raise InputError(f"CSV {path} has no predictor columns and no intercept")
    logger.info(f"Read {path}: n={X.shape[0]}, p={X.shape[1]}")
    return X, y, names


def write_design_csv(path: str, X: np.ndarray, y: np.ndarray, response: str = "y") -> None:
    """Writes X (columns x1..xp) and the response column to a CSV with a header."""
    df = pd.DataFrame(X, columns=[f"x{j + 1}" for j in range(X.shape[1])])
    df[response] = y
    df.to_csv(path, index=False)
    logger.info(f"Wrote {df.shape[0]} rows to {path}")


def write_table(path: str, rows: List[Dict[str, Any]], columns: Optional[List[str]] = None) -> pd.DataFrame:
    df = pd.DataFrame(rows, columns=columns)
    df.to_csv(path, index=False)
    logger.info(f"Wrote {len(df)} rows to {path}")
    return df


def write_json(path: str, payload: Dict[str, Any]) -> None:
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=False)
    logger.info(f"Wrote {path}")


def build_report(
    model: ModelName,
    result: FitResult,
    config: Dict[str, Any],
    time_seconds: Optional[float] = None,
) -> FitReport:
    """
    Wraps a FitResult into the versioned JSON report.

    Args:
        model (ModelName): The fitted model.
        result (FitResult): Fitter output.
        config (Dict[str, Any]): Configuration echoed into the report.
        time_seconds (float): Wall-clock fit time, excluded from determinism checks.

    Returns:
        FitReport: Validated report.
    """
    payload = result.to_dict()
    payload.pop("objective_history")
    return FitReport(model=model, config=config, time_seconds=time_seconds, **payload)


def write_report(path: str, report: FitReport) -> None:
    with open(path, "w") as f:
        f.write(report.model_dump_json(by_alias=True, indent=2))
    logger.info(f"Wrote fit report to {path}")


def read_report(path: str) -> FitReport:
    if not os.path.exists(path):
        raise FileNotFoundError(f"report not found: {path}")
    with open(path) as f:
        return FitReport.model_validate_json(f.read())


def load_coefficients(path: str, prefer_sparse: bool = False) -> Tuple[np.ndarray, Optional[FitReport]]:
    """
    Loads coefficients from a fit report, a simulation sidecar or a CSV.

    A CSV may hold one column of values or a column named `coef`. With
    prefer_sparse a report's sparse projection (extras["sparse_coef"]) is
    used when it has one.

    Returns:
        Tuple[np.ndarray, Optional[FitReport]]: Coefficients and the report
            they came from (None for sidecars and CSV files).
    """
    if path.endswith(".json"):
        if not os.path.exists(path):
            raise FileNotFoundError(f"coefficient file not found: {path}")
        with open(path) as f:
            payload = json.load(f)
        if "truth" in payload:
            return np.asarray(payload["truth"], dtype=float), None
        report = FitReport.model_validate(payload)
        coef = report.extras.get("sparse_coef", report.coef) if prefer_sparse else report.coef
        return np.asarray(coef, dtype=float), report
    if not os.path.exists(path):
        raise FileNotFoundError(f"coefficient file not found: {path}")
    df = pd.read_csv(path)
    column = "coef" if "coef" in df.columns else df.columns[-1]
    values = pd.to_numeric(df[column], errors="coerce")
    if values.isna().any():
        raise InputError(f"coefficient file {path} has missing or non-numeric values")
    return values.to_numpy(dtype=float), None


def selection_metrics(
    beta_hat,
    beta_star,
    X,
    intercept: bool = True,
    time_seconds: Optional[float] = None,
    iterations: Optional[int] = None,
    factorizations: Optional[int] = None,
) -> MetricsReport:
    """
    Support recovery and error metrics of an estimate against the truth.

    TPR and FPR count non-intercept coordinates only: TPR is the share of
    true nonzeros estimated nonzero, FPR the share of true zeros estimated
    nonzero (0 when the class is empty). EE = ||beta_hat - beta*|| and
    PE = ||X beta_hat - X beta*||.

    Raises:
        InputError: If the lengths disagree with each other or with X.
    """
    beta_hat = np.asarray(beta_hat, dtype=float).ravel()
    beta_star = np.asarray(beta_star, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if beta_hat.shape != beta_star.shape:
        raise InputError(f"estimate has length {beta_hat.size}, truth has length {beta_star.size}")
    if X.ndim != 2 or X.shape[1] != beta_star.size:
        raise InputError(f"design has {X.shape[-1]} columns, coefficients have length {beta_star.size}")

    start = 1 if intercept else 0
    est = beta_hat[start:] != 0
    true = beta_star[start:] != 0
    positives = int(np.sum(true))
    negatives = int(np.sum(~true))
    tpr = float(np.sum(est & true)) / positives if positives else 0.0
    fpr = float(np.sum(est & ~true)) / negatives if negatives else 0.0
    return MetricsReport(
        tpr=tpr,
        fpr=fpr,
        ee=float(np.linalg.norm(beta_hat - beta_star)),
        pe=float(np.linalg.norm(X @ (beta_hat - beta_star))),
        time_seconds=time_seconds,
        iterations=iterations,
        factorizations=factorizations,
    )
