"""Greedy comparison policy.

The agent flies straight at the center of the next target in the sequence.
As soon as that target's uncertainty reaches zero it turns toward the next
center; if it reaches the center first it dwells there until the uncertainty
is zero.  With ``depart_rule="anticipate"`` the agent instead leaves the
center as soon as the radial outbound leg will finish the draining exactly at
the inner circle, which is the time-optimal greedy law for large arrival
uncertainty.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from . import sim
from .model import AgentState, Scenario, TargetSpec

DEPART_RULES = ("zero", "anticipate")


class BaselineResult(NamedTuple):
    period: float
    history: list
    trajectory: sim.Trajectory
    converged: bool


def ray_circle_exit(p, v, center, radius) -> float:
    """Distance along unit ``v`` from ``p`` (inside the circle) to the circle."""
    w = np.asarray(p, dtype=float) - center
    b = float(w @ v)
    disc = max(0.0, b * b - float(w @ w) + radius * radius)
    return -b + math.sqrt(disc)


def outbound_drain(target: TargetSpec) -> float:
    """Uncertainty removed on a radial leg from the center out to the inner circle."""
    A, B, r, d = target.A, target.B, target.r, target.delta
    return -((A - B) * d + B * d**3 / (3 * r**2))


class _Flight:
    """Agent position, clock and uncertainties plus the recorded trajectory pieces."""

    def __init__(self, scenario: Scenario, start: AgentState, dt: float):
        self.sc = scenario
        self.pos = np.array(start.position, dtype=float)
        self.R = np.array(scenario.initial_uncertainty, dtype=float)
        self.t = float(start.time)
        self.dt = dt
        self.parts: list[sim.Trajectory] = []

    def _run(self, piece, label) -> sim.Trajectory:
        tr = sim.integrate_hybrid(self.sc, AgentState(tuple(self.pos), self.t), self.R, [piece], self.dt, label)
        self.parts.append(tr)
        self.R = tr.R[-1].copy()
        self.t = float(tr.t[-1])
        return tr

    def move(self, v, length: float, label: str) -> None:
        if length > 0:
            self._run((length, (float(v[0]), float(v[1]))), label)
            self.pos = self.pos + length * np.asarray(v)

    def dwell(self, duration: float, label: str) -> None:
        if duration > 0:
            self._run((duration, (0.0, 0.0)), label)

    def inbound(self, target: TargetSpec, idx: int, v, length: float, label: str) -> None:
        """Fly toward the center, stopping early where ``R[idx]`` first hits zero."""
        tr = sim.integrate_hybrid(self.sc, AgentState(tuple(self.pos), self.t), self.R,
                                  [(length, (float(v[0]), float(v[1])))], self.dt, label)
        hit = np.nonzero(tr.R[1:, idx] == 0.0)[0]
        if hit.size == 0:
            self.parts.append(tr)
            self.R = tr.R[-1].copy()
            self.t = float(tr.t[-1])
            self.pos = target.x.copy()
            return
        j = int(hit[0])  # zero reached within step j -> j + 1
        p = max(0.0, 1.0 - float(np.sum((tr.s[j] - target.x) ** 2)) / target.r**2)
        rate = target.A - target.B * p
        tau = float(tr.t[j] - tr.t[0]) + float(tr.R[j, idx]) / -rate
        self.move(v, min(tau, length), label)
        self.R[idx] = 0.0 if self.R[idx] < 1e-9 else self.R[idx]


def run_greedy_baseline(
    scenario: Scenario,
    max_cycles: int = 200,
    dt: float = 1e-3,
    start: Optional[AgentState] = None,
    tol_R: float = 1e-4,
    depart_rule: str = "zero",
) -> BaselineResult:
    """Simulate the greedy policy until the arrival uncertainties repeat.

    A cycle runs from the sensing-circle entrance of the first visit to the
    next such entrance.  Each history record holds, per visit, the arrival
    uncertainty (at the entrance), the time spent inside the sensing disk
    (``drain_times``), the time from leaving it to entering the next one
    (``switch_times``) and the uncertainty left at departure.  The returned
    period and trajectory are those of the last completed cycle.
    """
    if depart_rule not in DEPART_RULES:
        raise ValueError(f"depart_rule must be one of {DEPART_RULES}")
    if max_cycles < 1:
        raise ValueError("max_cycles must be at least 1")
    if start is None:
        from .coordinator import default_start

        start = default_start(scenario)
    K = scenario.K
    fl = _Flight(scenario, start, dt)
    entry, exit_, arrival, departure = [], [], [], []
    history: list[sim.CycleRecord] = []
    cycle_parts = 0  # index into fl.parts where the open cycle begins
    traj = None
    converged = False
    v_idx = 0
    while True:
        k = v_idx % K
        tg = scenario.visit_target(k)
        idx = scenario.visit_index(k)
        d = tg.x - fl.pos
        dist = float(np.linalg.norm(d))
        v = d / dist if dist > 0 else np.zeros(2)
        # finish leaving the previous disk; that stretch still belongs to the previous visit
        if v_idx > 0:
            pk = (v_idx - 1) % K
            pt = scenario.visit_target(pk)
            if dist > 0 and pt is not tg and float(np.linalg.norm(fl.pos - pt.x)) < pt.r:
                fl.move(v, min(ray_circle_exit(fl.pos, v, pt.x, pt.r), dist), f"draining_{pk + 1}")
                dist = float(np.linalg.norm(tg.x - fl.pos))
            exit_.append(fl.t)
        if dist > tg.r:
            fl.move(v, dist - tg.r, f"switching_{(k - 1) % K + 1}")
            fl.pos = tg.x - tg.r * v  # land exactly on the sensing circle
            dist = tg.r
        entry.append(fl.t)
        arrival.append(float(fl.R[idx]))

        if k == 0 and v_idx > 0:
            # the cycle that began K visits ago is complete
            n = v_idx // K - 1
            sl = slice(n * K, (n + 1) * K)
            e = np.array(entry[sl])
            x = np.array(exit_[sl])
            nxt = np.array(entry[n * K + 1:(n + 1) * K + 1])
            rec = sim.CycleRecord(
                arrival_uncertainty=np.array(arrival[sl]),
                drain_times=x - e,
                switch_times=nxt - x,
                period=float(entry[(n + 1) * K] - entry[n * K]),
                wall_time=float(entry[(n + 1) * K] - entry[n * K]),
                departure_uncertainty=np.array(departure[sl]),
            )
            if history:
                rec.residual = float(np.max(np.abs(rec.arrival_uncertainty - history[-1].arrival_uncertainty)))
            else:
                rec.residual = math.inf
            history.append(rec)
            pieces = fl.parts[cycle_parts:]
            traj = sim.Trajectory.concat(pieces) if any(len(p) > 1 for p in pieces) else None
            fl.parts = []
            cycle_parts = 0
            if rec.residual <= tol_R:
                converged = True
                break
            if len(history) >= max_cycles:
                break
        elif v_idx == 0:
            fl.parts = []  # discard the approach to the first entrance

        # drain: head for the center, turning as soon as the uncertainty is gone
        if dist > 0 and fl.R[idx] > 0:
            fl.inbound(tg, idx, v, dist, f"draining_{k + 1}")
        if float(np.linalg.norm(fl.pos - tg.x)) < 1e-12 and fl.R[idx] > 0:
            need = float(fl.R[idx])
            leaves = scenario.visit_target(k + 1) is not tg
            if depart_rule == "anticipate" and leaves:
                need = max(0.0, need - outbound_drain(tg))
            fl.dwell(need / (tg.B - tg.A), f"draining_{k + 1}")
            if depart_rule == "zero" or not leaves:
                fl.R[idx] = 0.0 if fl.R[idx] < 1e-9 else fl.R[idx]
        departure.append(float(fl.R[idx]))
        v_idx += 1

    if traj is None:
        traj = sim.integrate_hybrid(scenario, AgentState(tuple(fl.pos), fl.t), fl.R, [], dt, "draining_1")
    last = history[-1]
    return BaselineResult(last.period, history, traj, converged)
