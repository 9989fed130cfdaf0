"""Command-line interface: scenario files, experiments and result files.

Scenario files are YAML::

    targets:
      - {id: 1, x: 0.0, y: 0.0, A: 1.0, B: 20.0, r: 3.0}
      - ...
    sequence: [1, 2, 3]
    initial_uncertainty: [0.0, 0.0, 0.0]

Exit codes: 0 success, 2 input or validation error, 3 solver failure,
4 non-convergence.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import sim
from .baseline import run_greedy_baseline
from .coordinator import (
    BilevelError,
    BilevelOptions,
    BilevelResult,
    BoundaryAngles,
    default_start,
    run_bilevel,
)
from .draining import DrainingProblem, DrainingSolveError, replay, solve_draining, verify_solution
from .model import Scenario, ScenarioError, circle_point, validate_scenario

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_SOLVER = 3
EXIT_NOT_CONVERGED = 4

TARGET_FIELDS = {
    "id": "target id",
    "x": "x coordinate",
    "y": "y coordinate",
    "A": "growth rate",
    "B": "sensing gain",
    "r": "sensing radius",
}
TOP_FIELDS = ("targets", "sequence", "initial_uncertainty")


class InputError(Exception):
    """Unreadable or malformed scenario input; ``errors`` lists one message per problem."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --------------------------------------------------------------------------
# scenario files
# --------------------------------------------------------------------------

def _node_line(node) -> Optional[int]:
    return None if node is None else node.start_mark.line + 1


def _child(node, key):
    """Child node of a YAML mapping/sequence node, for line numbers in messages."""
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            if k.value == key:
                return v
    elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
        return node.value[key]
    return None


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    """Parse scenario YAML text and validate it."""
    try:
        root = yaml.compose(text)
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        mark = getattr(err, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark is not None else source
        raise InputError([f"{where}: YAML parse error: {getattr(err, 'problem', err)}"]) from err
    if not isinstance(raw, dict):
        raise InputError([f"{source}: expected a mapping with keys {', '.join(TOP_FIELDS)}"])
    errors = []
    for key in TOP_FIELDS:
        if key not in raw:
            errors.append(f"{source}: missing field '{key}'")
        elif not isinstance(raw[key], list):
            errors.append(f"{source}:{_node_line(_child(root, key))}: field '{key}' must be a list")
    if errors:
        raise InputError(errors)
    targets_node = _child(root, "targets")
    for i, entry in enumerate(raw["targets"]):
        line = _node_line(_child(targets_node, i))
        if not isinstance(entry, dict):
            errors.append(f"{source}:{line}: targets[{i}] must be a mapping")
            continue
        for key, meaning in TARGET_FIELDS.items():
            if key not in entry:
                errors.append(f"{source}:{line}: targets[{i}] missing field '{key}' ({meaning})")
            elif isinstance(entry[key], bool) or not isinstance(entry[key], (int, float)):
                errors.append(f"{source}:{line}: targets[{i}] field '{key}' ({meaning}) must be a number")
        unknown = sorted(set(entry) - set(TARGET_FIELDS))
        if unknown:
            errors.append(f"{source}:{line}: targets[{i}] has unknown fields {unknown}")
    for key in ("sequence", "initial_uncertainty"):
        for v in raw[key]:
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                errors.append(f"{source}:{_node_line(_child(root, key))}: '{key}' entries must be numbers")
                break
    if errors:
        raise InputError(errors)
    try:
        return validate_scenario(raw)
    except ScenarioError as err:
        raise InputError([f"{source}: {msg}" for _, _, msg in err.violations]) from err


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise InputError([f"{path}: cannot read scenario file ({err.strerror})"]) from err
    return parse_scenario(text, str(path))


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "targets": [
            {"id": t.id, "x": t.position[0], "y": t.position[1], "A": t.A, "B": t.B, "r": t.r}
            for t in scenario.targets
        ],
        "sequence": list(scenario.sequence),
        "initial_uncertainty": list(scenario.initial_uncertainty),
    }


def dump_scenario(scenario: Scenario) -> str:
    return yaml.safe_dump(scenario_to_dict(scenario), sort_keys=False, default_flow_style=None)


def write_scenario(path, scenario: Scenario) -> None:
    Path(path).write_text(dump_scenario(scenario))


# --------------------------------------------------------------------------
# result files
# --------------------------------------------------------------------------

def _fmt(v) -> str:
    return f"{float(v):.9g}"


def write_trajectory_csv(path, traj: sim.Trajectory) -> None:
    M = traj.R.shape[1]
    lines = [",".join(["t", "s_x", "s_y", "u_x", "u_y", "phase"] + [f"R_{i + 1}" for i in range(M)])]
    for j in range(len(traj)):
        row = [_fmt(traj.t[j]), _fmt(traj.s[j, 0]), _fmt(traj.s[j, 1]), _fmt(traj.u[j, 0]), _fmt(traj.u[j, 1]),
               traj.phase[j]]
        row.extend(_fmt(v) for v in traj.R[j])
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_history_csv(path, history: Sequence[sim.CycleRecord], K: int) -> None:
    header = ["cycle", "T", "grad_norm"] + [f"phi_{k + 1}" for k in range(K)] + [f"psi_{k + 1}" for k in range(K)]
    lines = [",".join(header + ["R_resid"])]
    for n, rec in enumerate(history):
        if rec.angles is None:
            phi = psi = [math.nan] * K
        else:
            phi, psi = rec.angles
        row = [str(n), _fmt(rec.period), _fmt(rec.grad_norm)]
        row += [_fmt(v) for v in phi] + [_fmt(v) for v in psi] + [_fmt(rec.residual)]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")


def _write_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _num(v):
    """JSON-friendly float (None for nan/inf)."""
    v = float(v)
    return v if math.isfinite(v) else None


def solution_to_dict(solution, problem: DrainingProblem) -> dict:
    rep = solution.report
    return {
        "target": problem.target.id,
        "entrance": list(problem.entrance),
        "departure": list(problem.departure),
        "arrival_uncertainty": problem.arrival_uncertainty,
        "nodes": solution.nodes,
        "total_time": solution.total_time,
        "inner_exit_time": solution.inner_exit_time,
        "inner_exit_point": [float(v) for v in solution.inner_exit_point],
        "terminal_leg_time": solution.terminal_leg_time,
        "pinned": solution.pinned,
        "lambda_phi": [float(v) for v in solution.lambda_phi],
        "lambda_psi": [float(v) for v in solution.lambda_psi],
        "lambda_R": float(solution.lambda_R),
        "node_positions": solution.node_positions.tolist(),
        "node_uncertainty": solution.node_uncertainty.tolist(),
        "node_controls": solution.node_controls.tolist(),
        "solver": {
            "status": rep.status,
            "iterations": rep.iterations,
            "kkt_residual": _num(rep.kkt_residual),
            "constraint_violation": _num(rep.constraint_violation),
        },
    }


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    scenario_path: str
    out: str = "."
    nodes: int = 20
    dt: float = 1e-3
    alpha0: float = 0.2
    decay: float = 0.1
    tol_grad: float = 1e-3
    tol_R: float = 1e-4
    max_cycles: int = 200
    seed: int = 0
    coupling: bool = False

    def __post_init__(self):
        if self.nodes < 2:
            raise ValueError("--nodes must be at least 2")
        if not (0 < self.dt <= 1.0):
            raise ValueError("--dt must lie in (0, 1]")
        if self.max_cycles < 1:
            raise ValueError("--max-cycles must be at least 1")

    def bilevel_options(self) -> BilevelOptions:
        return BilevelOptions(alpha0=self.alpha0, decay=self.decay, tol_grad=self.tol_grad, tol_R=self.tol_R,
                              max_cycles=self.max_cycles, coupling=self.coupling, nodes=self.nodes, dt=self.dt)

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        return cls(scenario_path=args.scenario, out=args.out, nodes=args.nodes, dt=args.dt, alpha0=args.alpha0,
                   decay=args.decay, tol_grad=args.tol_grad, tol_R=args.tol_R, max_cycles=args.max_cycles,
                   seed=args.seed, coupling=args.coupling)


def _out_dir(config: RunConfig) -> Path:
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bilevel_summary(res: BilevelResult) -> dict:
    return {
        "converged": res.converged,
        "cycles": len(res.history),
        "period": res.record.period,
        "grad_norm": res.record.grad_norm,
        "residual": _num(res.record.residual),
        "phi": list(res.angles.phi),
        "psi": list(res.angles.psi),
        "arrival_uncertainty": res.record.arrival_uncertainty.tolist(),
        "drain_times": res.record.drain_times.tolist(),
        "switch_times": res.record.switch_times.tolist(),
    }


def _report_bilevel_failure(err: BilevelError) -> int:
    print(f"error: {err}", file=sys.stderr)
    return EXIT_SOLVER


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_validate(args) -> int:
    sc = load_scenario(args.scenario)
    print(f"ok: {sc.M} targets, {sc.K} visits, sequence {list(sc.sequence)}")
    return EXIT_OK


def cmd_solve_local(args) -> int:
    config = RunConfig.from_args(args)
    sc = load_scenario(config.scenario_path)
    try:
        target = sc.targets[sc.index_of(args.target)]
    except KeyError:
        raise InputError([f"unknown target id {args.target}; scenario has {[t.id for t in sc.targets]}"])
    if not args.arrival >= 0:
        raise InputError(["--arrival must be nonnegative"])
    dep_radius = target.delta if args.departure_radius == "inner" else target.r
    problem = DrainingProblem(
        target,
        tuple(circle_point(target.x, target.r, args.phi)),
        tuple(circle_point(target.x, dep_radius, args.psi)),
        args.arrival,
        config.nodes,
    )
    try:
        sol = solve_draining(problem)
    except DrainingSolveError as err:
        print(f"error: draining solve failed: {err.report}", file=sys.stderr)
        return EXIT_SOLVER
    report = verify_solution(sol, problem)
    out = _out_dir(config)
    data = solution_to_dict(sol, problem)
    data["verification"] = {c.name: {"passed": c.passed, "detail": c.detail} for c in report.checks}
    _write_json(out / "solution.json", data)
    write_trajectory_csv(out / "trajectory.csv", replay(sol, problem, leg_dt=config.dt))
    print(f"T* = {sol.total_time:.9g}")
    print(f"t0 = {sol.inner_exit_time:.9g}   s0 = ({sol.inner_exit_point[0]:.9g}, {sol.inner_exit_point[1]:.9g})")
    print(f"lambda_phi = {np.array2string(sol.lambda_phi, precision=6)}   "
          f"lambda_psi = {np.array2string(sol.lambda_psi, precision=6)}   lambda_R = {sol.lambda_R:.6g}")
    print(f"solver: {sol.report.status}, {sol.report.iterations} iterations, cpu {sol.cpu_time:.3f} s")
    for c in report.checks:
        print(f"  [{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = RunConfig.from_args(args)
    sc = load_scenario(config.scenario_path)
    try:
        res = run_bilevel(sc, config.bilevel_options())
    except BilevelError as err:
        return _report_bilevel_failure(err)
    out = _out_dir(config)
    write_trajectory_csv(out / "trajectory.csv", res.trajectory)
    write_history_csv(out / "history.csv", res.history, sc.K)
    _write_json(out / "summary.json", _bilevel_summary(res))
    print(f"period {res.record.period:.6f} after {len(res.history)} cycles "
          f"({'converged' if res.converged else 'not converged'})")
    print(f"per-visit cpu time of the last cycle [s]: {np.array2string(res.record.cpu_times, precision=3)}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


def cmd_compare(args) -> int:
    config = RunConfig.from_args(args)
    sc = load_scenario(config.scenario_path)
    opts = config.bilevel_options()
    greedy = run_greedy_baseline(sc, max_cycles=config.max_cycles, dt=config.dt, start=default_start(sc),
                                 tol_R=config.tol_R)
    try:
        res = run_bilevel(sc, opts)
    except BilevelError as err:
        return _report_bilevel_failure(err)
    out = _out_dir(config)
    write_trajectory_csv(out / "greedy_trajectory.csv", greedy.trajectory)
    write_history_csv(out / "greedy_history.csv", greedy.history, sc.K)
    write_trajectory_csv(out / "bilevel_trajectory.csv", res.trajectory)
    write_history_csv(out / "bilevel_history.csv", res.history, sc.K)
    improvement = 100.0 * (greedy.period - res.record.period) / greedy.period if greedy.period > 0 else 0.0
    summary = {
        "greedy": {"period": greedy.period, "converged": greedy.converged, "cycles": len(greedy.history)},
        "bilevel": _bilevel_summary(res),
        "improvement_percent": improvement,
        "greedy_not_better": bool(greedy.period >= res.record.period - 1e-9),
    }
    _write_json(out / "summary.json", summary)
    # CPU times vary run to run, so they go to the console, not into result files
    print(f"greedy period  {greedy.period:.6f} ({len(greedy.history)} cycles)")
    print(f"bilevel period {res.record.period:.6f} ({len(res.history)} cycles)")
    print(f"improvement    {improvement:.2f}%")
    print(f"per-visit cpu time of the last bilevel cycle [s]: {np.array2string(res.record.cpu_times, precision=3)}")
    if not (greedy.converged and res.converged):
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def random_angles(rng: np.random.Generator, K: int) -> BoundaryAngles:
    v = rng.uniform(0.0, 2 * math.pi, size=2 * K)
    return BoundaryAngles.from_vector(v)


def _multistart_job(job):
    sc, opts, angles = job
    try:
        res = run_bilevel(sc, opts, initial_angles=angles)
        return {"periods": [rec.period for rec in res.history], "converged": res.converged,
                "final": res.record.period, "error": None}
    except BilevelError as err:
        return {"periods": [], "converged": False, "final": math.nan, "error": str(err)}


def multistart(scenario: Scenario, options: BilevelOptions, count: int, seed: int, workers: int = 1) -> list[dict]:
    """Bilevel runs from ``count`` seeded uniform-random angle initializations."""
    rng = np.random.default_rng(seed)
    jobs = [(scenario, options, random_angles(rng, scenario.K)) for _ in range(count)]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_multistart_job, jobs))
    else:
        results = [_multistart_job(j) for j in jobs]
    for j, r in zip(jobs, results):
        r["initial_angles"] = list(j[2].as_vector())
    return results


def multistart_summary(results: Sequence[dict]) -> dict:
    finals = np.array([r["final"] for r in results if r["error"] is None])
    summary = {
        "runs": len(results),
        "failures": [{"run": i, "error": r["error"]} for i, r in enumerate(results) if r["error"] is not None],
        "not_converged": [i for i, r in enumerate(results) if r["error"] is None and not r["converged"]],
    }
    if finals.size:
        med = float(np.median(finals))
        summary.update(min=float(finals.min()), median=med, max=float(finals.max()),
                       spread_percent=100.0 * float(np.max(np.abs(finals - med))) / med)
    return summary


def cmd_multistart(args) -> int:
    config = RunConfig.from_args(args)
    sc = load_scenario(config.scenario_path)
    if args.count < 1:
        raise InputError(["--count must be at least 1"])
    results = multistart(sc, config.bilevel_options(), args.count, config.seed, args.workers)
    out = _out_dir(config)
    lines = ["run,cycle,T"]
    for i, r in enumerate(results):
        lines.extend(f"{i},{n},{_fmt(T)}" for n, T in enumerate(r["periods"]))
    (out / "multistart_periods.csv").write_text("\n".join(lines) + "\n")
    summary = multistart_summary(results)
    summary["initial_angles"] = [r["initial_angles"] for r in results]
    _write_json(out / "multistart_summary.json", summary)
    if "median" in summary:
        print(f"final period min {summary['min']:.6f} median {summary['median']:.6f} max {summary['max']:.6f} "
              f"(spread {summary['spread_percent']:.3g}% of median)")
    print(f"{len(summary['failures'])} failed, {len(summary['not_converged'])} not converged of {len(results)}")
    if len(summary["failures"]) == len(results):
        return EXIT_SOLVER
    return EXIT_OK if not summary["failures"] and not summary["not_converged"] else EXIT_NOT_CONVERGED


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("scenario", help="scenario YAML file")
    shared.add_argument("--nodes", type=int, default=20, help="shooting nodes per draining problem")
    shared.add_argument("--dt", type=float, default=1e-3, help="simulation step for switching legs")
    shared.add_argument("--alpha0", type=float, default=0.2, help="initial gradient step size")
    shared.add_argument("--decay", type=float, default=0.1, help="step decay c in alpha0 / (1 + c n)")
    shared.add_argument("--tol-grad", type=float, default=1e-3, help="gradient-norm tolerance")
    shared.add_argument("--tol-R", type=float, default=1e-4, help="arrival-uncertainty residual tolerance")
    shared.add_argument("--max-cycles", type=int, default=200)
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--coupling", action="store_true",
                        help="include the arrival-uncertainty coupling terms in the gradient")
    shared.add_argument("--out", default=".", help="output directory")

    parser = argparse.ArgumentParser(prog="pmcycle", description="Persistent-monitoring cycle optimization")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("scenario")
    p.set_defaults(func=cmd_validate)
    p = sub.add_parser("solve-local", parents=[shared], help="solve one draining problem")
    p.add_argument("--target", type=int, required=True, help="target id")
    p.add_argument("--phi", type=float, required=True, help="entrance angle [rad]")
    p.add_argument("--psi", type=float, required=True, help="departure angle [rad]")
    p.add_argument("--arrival", type=float, required=True, help="arrival uncertainty")
    p.add_argument("--departure-radius", choices=("inner", "sensing"), default="inner",
                   help="circle the departure point lies on")
    p.set_defaults(func=cmd_solve_local)
    p = sub.add_parser("run", parents=[shared], help="bilevel optimization")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("compare", parents=[shared], help="greedy baseline vs bilevel optimization")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("multistart", parents=[shared], help="bilevel runs from random initial angles")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_multistart)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as err:
        for msg in err.errors:
            print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as err:  # option ranges, problem construction
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
