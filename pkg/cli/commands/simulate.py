import argparse
import os

from logger_config import logger
from cli.commands.fit import default_seed
from mmfit.simdata import simulate
from mmfit.utils import write_design_csv, write_json
from models.mm_models import ContaminationSpec, NoiseFamily, NoiseSpec, SimResponse, SimSpec


def sidecar_path(output: str) -> str:
    return os.path.splitext(output)[0] + ".json"


def spec_from_args(args: argparse.Namespace) -> SimSpec:
    contamination = None
    if args.contamination is not None:
        contamination = ContaminationSpec(fraction=args.contamination, shift=args.shift)
    return SimSpec(
        n=args.n,
        p=args.p,
        rho=args.rho,
        noise=NoiseSpec(family=args.noise, sd=args.sd, df=args.df),
        quantile_q=args.q,
        contamination=contamination,
        seed=args.seed,
        response=args.response,
        c=args.c,
        rank=args.rank,
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    """
    Writes the simulated design and response as CSV plus a JSON sidecar with
    the full SimSpec and the true coefficients.
    """
    spec = spec_from_args(args)
    X, y, truth = simulate(spec)
    write_design_csv(args.output, X, y)
    sidecar = sidecar_path(args.output)
    write_json(sidecar, {
        "schema": 1,
        "spec": spec.model_dump(mode="json"),
        "truth": truth.tolist(),
    })
    logger.info(f"Simulated {spec.response.value} data written to {args.output} and {sidecar}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("simulate", help="generate a simulation scenario")
    parser.add_argument("--response", choices=[r.value for r in SimResponse], default=SimResponse.QUANTILE.value)
    parser.add_argument("--n", type=int, required=True)
    parser.add_argument("--p", type=int, required=True)
    parser.add_argument("--rho", type=float, default=0.7)
    parser.add_argument("--noise", choices=[f.value for f in NoiseFamily], default=NoiseFamily.GAUSSIAN.value)
    parser.add_argument("--sd", type=float, default=1.0)
    parser.add_argument("--df", type=float, default=1.5)
    parser.add_argument("--q", type=float, help="quantile level of the response")
    parser.add_argument("--contamination", type=float, help="contaminated fraction for l2e data")
    parser.add_argument("--shift", type=float, default=10.0)
    parser.add_argument("--c", type=int, default=3)
    parser.add_argument("--rank", type=int, default=1)
    parser.add_argument("--seed", type=int, default=default_seed())
    parser.add_argument("--output", required=True, help="CSV path; the sidecar goes next to it")
    parser.set_defaults(func=cmd_simulate)
