"""Bilevel runs from random initial boundary angles.

    python scripts/multistart.py [scenario.yaml] [--count 100] [--seed 0] [--workers 4]

Prints the spread of the final periods; every run should reach the same
optimum up to solver noise.
"""

import argparse
import os
import time
from pathlib import Path

import numpy as np

from pmcycle.cli import load_scenario, multistart, multistart_summary
from pmcycle.coordinator import BilevelOptions

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", nargs="?", default=str(ROOT / "scenarios" / "equilateral.yaml"))
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    args = ap.parse_args()
    sc = load_scenario(args.scenario)

    t0 = time.perf_counter()
    results = multistart(sc, BilevelOptions(), args.count, args.seed, args.workers)
    wall = time.perf_counter() - t0
    summary = multistart_summary(results)

    cycles = np.array([len(r["periods"]) for r in results if r["error"] is None])
    print(f"{summary['runs']} runs in {wall:.1f}s, {len(summary['failures'])} failed, "
          f"{len(summary['not_converged'])} not converged")
    if cycles.size:
        print(f"cycles to converge: min {cycles.min()}, median {int(np.median(cycles))}, max {cycles.max()}")
        print(f"final period: min {summary['min']:.6f}, median {summary['median']:.6f}, max {summary['max']:.6f}")
        print(f"largest deviation from the median: {summary['spread_percent']:.2e}%")


if __name__ == "__main__":
    main()
