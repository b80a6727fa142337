import argparse

from logger_config import logger
from mmfit.utils import load_coefficients, read_design_csv, selection_metrics, write_json


def cmd_metrics(args: argparse.Namespace) -> int:
    beta_hat, report = load_coefficients(args.estimate, prefer_sparse=True)
    beta_star, _ = load_coefficients(args.truth)
    X, _, _ = read_design_csv(args.data, args.response, args.intercept)

    metrics = selection_metrics(
        beta_hat,
        beta_star,
        X,
        intercept=args.intercept,
        time_seconds=report.time_seconds if report else None,
        iterations=report.iterations if report else None,
        factorizations=report.factorizations if report else None,
    )
    logger.info(f"Metrics: tpr={metrics.tpr:.4f}, fpr={metrics.fpr:.4f}, ee={metrics.ee:.4g}, pe={metrics.pe:.4g}")
    if args.output:
        write_json(args.output, metrics.model_dump())
    else:
        print(metrics.model_dump_json(indent=2))
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("metrics", help="selection and error metrics of an estimate")
    parser.add_argument("--estimate", required=True, help="fit report JSON or coefficient CSV")
    parser.add_argument("--truth", required=True, help="simulation sidecar JSON or coefficient CSV")
    parser.add_argument("--data", required=True, help="CSV whose predictors form X")
    parser.add_argument("--response", default="y")
    parser.add_argument("--no-intercept", dest="intercept", action="store_false")
    parser.add_argument("--output")
    parser.set_defaults(func=cmd_metrics)
