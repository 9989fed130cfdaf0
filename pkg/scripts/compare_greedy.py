"""Greedy center-to-center policy vs bilevel optimization on a scenario.

    python scripts/compare_greedy.py [scenario.yaml] [--rule zero|anticipate]

Defaults to the bundled equilateral scenario.  Prints the per-cycle period
history of both methods and the relative improvement.
"""

import argparse
import time
from pathlib import Path

from pmcycle.baseline import DEPART_RULES, run_greedy_baseline
from pmcycle.cli import load_scenario
from pmcycle.coordinator import default_start, run_bilevel

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenario", nargs="?", default=str(ROOT / "scenarios" / "equilateral.yaml"))
    ap.add_argument("--rule", choices=DEPART_RULES, default="zero", help="greedy departure rule")
    args = ap.parse_args()
    sc = load_scenario(args.scenario)

    t0 = time.perf_counter()
    greedy = run_greedy_baseline(sc, start=default_start(sc), depart_rule=args.rule)
    t1 = time.perf_counter()
    res = run_bilevel(sc)
    t2 = time.perf_counter()

    print(f"{'cycle':>5} {'greedy T':>12} {'bilevel T':>12} {'|grad|':>10}")
    for n in range(max(len(greedy.history), len(res.history))):
        g = f"{greedy.history[n].period:12.6f}" if n < len(greedy.history) else " " * 12
        if n < len(res.history):
            rec = res.history[n]
            b = f"{rec.period:12.6f} {rec.grad_norm:10.2e}"
        else:
            b = ""
        print(f"{n:5d} {g} {b}")
    gain = 100.0 * (greedy.period - res.record.period) / greedy.period
    print(f"\ngreedy ({args.rule}) period {greedy.period:.6f}  [{t1 - t0:.2f}s, converged={greedy.converged}]")
    print(f"bilevel period        {res.record.period:.6f}  [{t2 - t1:.2f}s, converged={res.converged}]")
    print(f"improvement           {gain:.2f}%")


if __name__ == "__main__":
    main()
