import argparse

from cli.commands import bench, cv, fit, metrics, simulate


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmfit",
        description="Robust and penalized regression by majorization-minimization",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    fit.register(subparsers)
    simulate.register(subparsers)
    cv.register(subparsers)
    metrics.register(subparsers)
    bench.register(subparsers)
    return parser
