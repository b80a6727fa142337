import argparse
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np
import pandas as pd

from logger_config import logger
from cli.commands.fit import default_seed
from mmfit import estimators
from mmfit.estimators import RegressionData
from mmfit.exceptions import InputError, MMFitError
from mmfit.mmengine import FitResult
from mmfit.simdata import simulate
from mmfit.utils import write_table
from models.mm_models import ContaminationSpec, MMOptions, NoiseFamily, NoiseSpec, SimResponse, SimSpec

AGREEMENT_TOL = 1e-6
BENCH_COLUMNS = [
    "scenario", "n", "p", "solver", "time_seconds", "iterations",
    "factorizations", "objective", "converged", "objective_gap", "agree",
]


@dataclass(frozen=True)
class BenchScenario:
    """A data generator plus the recycled MM fitter and its refactorizing baseline."""
    make_data: Callable[[int, int, int], RegressionData]
    mm: Callable[[RegressionData, MMOptions], FitResult]
    baseline: Callable[[RegressionData, MMOptions, np.ndarray], FitResult]


def _lad_data(n: int, p: int, seed: int) -> RegressionData:
    spec = SimSpec(
        n=n, p=p, seed=seed, quantile_q=0.5,
        response=SimResponse.QUANTILE, noise=NoiseSpec(family=NoiseFamily.STUDENT_T),
    )
    X, y, _ = simulate(spec)
    return RegressionData(X, y)


def _l2e_data(n: int, p: int, seed: int) -> RegressionData:
    spec = SimSpec(n=n, p=p, seed=seed, response=SimResponse.L2E, contamination=ContaminationSpec())
    X, y, _ = simulate(spec)
    return RegressionData(X, y)


def _lad_mu(data: RegressionData) -> float:
    return estimators.default_quantile_bandwidth(data.n, data.p)


SCENARIOS: Dict[str, BenchScenario] = {
    "lad": BenchScenario(
        make_data=_lad_data,
        mm=lambda data, opts: estimators.fit_lad(data, _lad_mu(data), opts),
        baseline=lambda data, opts, init: estimators.fit_lad_irls(data, _lad_mu(data), opts, init=init),
    ),
    "l2e": BenchScenario(
        make_data=_l2e_data,
        mm=lambda data, opts: estimators.fit_l2e(data, opts),
        baseline=lambda data, opts, init: estimators.fit_l2e_irls(data, opts, init=init),
    ),
}


def parse_sizes(text: str) -> List[Tuple[int, int]]:
    """Parse "500x20,2000x50" into [(500, 20), (2000, 50)]."""
    sizes = []
    for item in text.split(","):
        try:
            n, p = (int(v) for v in item.strip().lower().split("x"))
        except ValueError as e:
            raise InputError(f"size '{item}' is not of the form NxP") from e
        if n < 1 or p < 1:
            raise InputError(f"size '{item}' must have positive n and p")
        sizes.append((n, p))
    return sizes


def _timed(fn, *args) -> Tuple[FitResult, float]:
    start = time.perf_counter()
    result = fn(*args)
    return result, time.perf_counter() - start


def run_scenario(name: str, n: int, p: int, seed: int, opts: MMOptions) -> List[dict]:
    """
    Fit one problem with both solvers from the same least squares start.

    The recycled MM fit must report exactly one factorization and the
    baseline one factorization per iteration; anything else is an error.
    Objective agreement is reported, not enforced.
    """
    scenario = SCENARIOS[name]
    data = scenario.make_data(n, p, seed)
    init = np.linalg.lstsq(data.X, data.y, rcond=None)[0]
    mm, mm_time = _timed(scenario.mm, data, opts)
    base, base_time = _timed(scenario.baseline, data, opts, init)

    if mm.factor_count != 1:
        raise MMFitError(f"{name}: MM fit performed {mm.factor_count} factorizations, expected 1")
    if base.factor_count != base.iterations:
        raise MMFitError(
            f"{name}: baseline performed {base.factor_count} factorizations over {base.iterations} iterations"
        )
    gap = abs(mm.objective - base.objective) / (1.0 + abs(base.objective))
    agree = gap <= AGREEMENT_TOL
    if not agree:
        logger.warning(f"[bench {name}] n={n}, p={p}: objectives differ by {gap:.3g} (relative)")
    logger.info(
        f"[bench {name}] n={n}, p={p}: MM {mm_time:.3f}s/{mm.iterations} it, "
        f"baseline {base_time:.3f}s/{base.iterations} it"
    )
    rows = []
    for solver, result, seconds in (("mm", mm, mm_time), ("irls", base, base_time)):
        rows.append({
            "scenario": name,
            "n": n,
            "p": p,
            "solver": solver,
            "time_seconds": seconds,
            "iterations": result.iterations,
            "factorizations": result.factor_count,
            "objective": result.objective,
            "converged": result.converged,
            "objective_gap": gap,
            "agree": agree,
        })
    return rows


def cmd_bench(args: argparse.Namespace) -> int:
    if args.scenario not in SCENARIOS:
        raise InputError(f"unknown bench scenario '{args.scenario}'; choose from {sorted(SCENARIOS)}")
    opts = MMOptions(tol=args.tol, max_iter=args.max_iter)
    rows = []
    for n, p in parse_sizes(args.sizes):
        rows.extend(run_scenario(args.scenario, n, p, args.seed, opts))
    if args.output:
        write_table(args.output, rows, BENCH_COLUMNS)
    else:
        print(pd.DataFrame(rows, columns=BENCH_COLUMNS).to_csv(index=False), end="")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("bench", help="recycled MM against a refactorizing baseline")
    parser.add_argument("scenario", help=f"one of {sorted(SCENARIOS)}")
    parser.add_argument("--sizes", default="500x50", help="comma separated NxP sizes")
    parser.add_argument("--seed", type=int, default=default_seed())
    parser.add_argument("--tol", type=float, default=1e-10)
    parser.add_argument("--max-iter", type=int, default=10000)
    parser.add_argument("--output", help="CSV path (stdout when omitted)")
    parser.set_defaults(func=cmd_bench)
