"""Forward simulation of the agent and the clamped uncertainty dynamics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Optional, Sequence

import numpy as np

from .model import AgentState, Scenario, TargetSpec

# A control schedule is a sequence of (duration, (u_x, u_y)) pieces held constant.
Piece = tuple[float, tuple[float, float]]
CONTROL_TOL = 1e-9


class TrajectorySample(NamedTuple):
    t: float
    s: np.ndarray
    u: np.ndarray
    R: np.ndarray
    phase: str


@dataclass
class Trajectory:
    """Sampled trajectory; indexing yields :class:`TrajectorySample`.

    ``u[j]`` is the control held on ``[t[j], t[j+1])``; the final sample
    repeats the last control.
    """

    t: np.ndarray
    s: np.ndarray
    u: np.ndarray
    R: np.ndarray
    phase: list[str]

    def __len__(self):
        return self.t.size

    def __getitem__(self, j) -> TrajectorySample:
        return TrajectorySample(float(self.t[j]), self.s[j], self.u[j], self.R[j], self.phase[j])

    def __iter__(self) -> Iterator[TrajectorySample]:
        return (self[j] for j in range(len(self)))

    @property
    def end(self) -> TrajectorySample:
        return self[len(self) - 1]

    @staticmethod
    def concat(parts: Sequence["Trajectory"]) -> "Trajectory":
        """Join trajectories whose end/start samples coincide (duplicates dropped)."""
        parts = [p for p in parts if len(p)]
        t = [parts[0].t]
        s = [parts[0].s]
        u = [parts[0].u]
        R = [parts[0].R]
        phase = list(parts[0].phase)
        for p in parts[1:]:
            u[-1] = u[-1].copy()
            u[-1][-1] = p.u[0]
            t.append(p.t[1:])
            s.append(p.s[1:])
            u.append(p.u[1:])
            R.append(p.R[1:])
            phase.extend(p.phase[1:])
        return Trajectory(np.concatenate(t), np.concatenate(s), np.concatenate(u), np.concatenate(R), phase)


@dataclass(frozen=True)
class UncertaintyTrace:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def __call__(self, t) -> np.ndarray:
        return np.interp(t, self.times, self.values)


def schedule_duration(schedule: Sequence[Piece]) -> float:
    return float(sum(d for d, _ in schedule))


def check_schedule(schedule: Sequence[Piece]) -> None:
    for d, u in schedule:
        if d < 0 or not math.isfinite(d):
            raise ValueError(f"invalid piece duration {d}")
        if math.hypot(u[0], u[1]) > 1.0 + CONTROL_TOL:
            raise ValueError(f"control magnitude {math.hypot(u[0], u[1]):.12g} exceeds 1")


def _step_grid(schedule: Sequence[Piece], dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-step durations and controls; each piece ends exactly on its boundary."""
    hs, us = [], []
    for d, u in schedule:
        if d <= 0:
            continue
        n = max(1, int(math.ceil(d / dt - 1e-9)))
        h = np.full(n, dt)
        h[-1] = d - dt * (n - 1)
        hs.append(h)
        us.append(np.tile(np.asarray(u, dtype=float), (n, 1)))
    if not hs:
        return np.zeros(0), np.zeros((0, 2))
    return np.concatenate(hs), np.concatenate(us)


def sensing_field(targets: Sequence[TargetSpec], s: np.ndarray) -> np.ndarray:
    """Sensing values p_i(s) for an (n, 2) array of positions, shape (n, M)."""
    X = np.array([t.position for t in targets])
    r2 = np.array([t.r**2 for t in targets])
    d2 = np.sum((s[:, None, :] - X[None, :, :]) ** 2, axis=2)
    return np.maximum(0.0, 1.0 - d2 / r2)


def clamped_accumulate(R0: np.ndarray, increments: np.ndarray) -> np.ndarray:
    """Iterate ``R <- max(0, R + inc)`` over rows of ``increments``, vectorized.

    Uses the closed form of the reflected random walk:
    ``R_n = S_n - min(-R_0, min_{k<=n} S_k)`` with ``S`` the partial sums.
    """
    n, M = increments.shape
    S = np.zeros((n + 1, M))
    np.cumsum(increments, axis=0, out=S[1:])
    running_min = np.minimum.accumulate(np.minimum(S, -np.asarray(R0)[None, :]), axis=0)
    return S - running_min


def integrate_hybrid(
    scenario: Scenario,
    start: AgentState,
    R0,
    controls: Sequence[Piece],
    dt: float = 1e-3,
    phase: str = "",
) -> Trajectory:
    """Explicit Euler on the agent and the clamped uncertainty of every target."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    R0 = np.asarray(R0, dtype=float)
    if R0.shape != (scenario.M,) or np.any(R0 < 0):
        raise ValueError("R0 must hold one nonnegative value per target")
    check_schedule(controls)
    h, u = _step_grid(controls, dt)
    s = np.empty((h.size + 1, 2))
    s[0] = start.position
    np.cumsum(h[:, None] * u, axis=0, out=s[1:])
    s[1:] += s[0]
    t = np.empty(h.size + 1)
    t[0] = start.time
    np.cumsum(h, out=t[1:])
    t[1:] += start.time
    A = np.array([tg.A for tg in scenario.targets])
    B = np.array([tg.B for tg in scenario.targets])
    rates = A[None, :] - B[None, :] * sensing_field(scenario.targets, s[:-1])
    R = clamped_accumulate(R0, h[:, None] * rates)
    u_full = np.vstack([u, u[-1:] if u.size else np.zeros((1, 2))])
    return Trajectory(t, s, u_full, R, [phase] * t.size)


def straight_leg(a, b) -> list[Piece]:
    """Maximal constant control from ``a`` to ``b``."""
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    L = float(np.linalg.norm(d))
    if L == 0.0:
        return []
    return [(L, (d[0] / L, d[1] / L))]


@dataclass
class PhasePlan:
    """One phase of a cycle: a draining visit or a switching leg.

    ``dt`` overrides the simulation step for this phase (draining phases use
    the shooting step so the replay matches the transcription exactly).
    """

    kind: str  # "draining" | "switching"
    visit: int
    schedule: list[Piece]
    dt: Optional[float] = None

    @property
    def label(self) -> str:
        return f"{self.kind}_{self.visit + 1}"

    @property
    def duration(self) -> float:
        return schedule_duration(self.schedule)


@dataclass
class CyclePlan:
    start: tuple[float, float]
    phases: list[PhasePlan]


@dataclass
class CycleRecord:
    """Bookkeeping for one cycle; visit arrays are indexed by visit k."""

    arrival_uncertainty: np.ndarray
    drain_times: np.ndarray
    switch_times: np.ndarray
    period: float
    wall_time: float
    gradient: Optional[np.ndarray] = None
    residual: float = math.nan
    angles: Optional[tuple[np.ndarray, np.ndarray]] = None
    duals: list = field(default_factory=list)
    cpu_times: Optional[np.ndarray] = None
    departure_uncertainty: Optional[np.ndarray] = None

    @property
    def grad_norm(self) -> float:
        return math.nan if self.gradient is None else float(np.max(np.abs(self.gradient)))


def simulate_cycle(
    scenario: Scenario,
    plan: CyclePlan,
    R0,
    dt: float = 1e-3,
    start_time: float = 0.0,
) -> tuple[CycleRecord, Trajectory]:
    """Execute the phases of ``plan`` back to back.

    The arrival uncertainty of visit k is the value of its target's
    uncertainty at the first sample of draining phase k.
    """
    drains = [p for p in plan.phases if p.kind == "draining"]
    if len(drains) != scenario.K or sorted(p.visit for p in drains) != list(range(scenario.K)):
        raise ValueError(f"plan has {len(drains)} draining phases for a sequence of length {scenario.K}")
    K = scenario.K
    arrivals = np.full(K, math.nan)
    departures = np.full(K, math.nan)
    drain_times = np.zeros(K)
    switch_times = np.zeros(K)
    parts = []
    state = AgentState(plan.start, start_time)
    R = np.asarray(R0, dtype=float)
    for ph in plan.phases:
        tr = integrate_hybrid(scenario, state, R, ph.schedule, ph.dt or dt, ph.label)
        if ph.kind == "draining":
            idx = scenario.visit_index(ph.visit)
            arrivals[ph.visit] = tr.R[0, idx]
            departures[ph.visit] = tr.R[-1, idx]
            drain_times[ph.visit] += ph.duration
        else:
            switch_times[ph.visit] += ph.duration
        parts.append(tr)
        end = tr.end
        state = AgentState((end.s[0], end.s[1]), end.t)
        R = end.R
    traj = Trajectory.concat(parts)
    wall = float(traj.t[-1] - traj.t[0])
    record = CycleRecord(arrivals, drain_times, switch_times,
                         float(drain_times.sum() + switch_times.sum()), wall,
                         departure_uncertainty=departures)
    return record, traj


def recover_true_uncertainty(relaxed: UncertaintyTrace, t0: float) -> tuple[UncertaintyTrace, bool]:
    """Map a relaxed (unclamped) uncertainty trace to the true clamped one.

    Before ``t0`` negative values are projected to zero; afterwards the trace
    is shifted by the violation at ``t0``.  The flag is ``True`` when the
    trace does not have the single-dip shape this rule assumes (for example
    after re-entering the inner disk), in which case the result still
    follows the rule but differs from clamped integration.
    """
    t, v = relaxed.times, relaxed.values
    if not (t[0] - 1e-12 <= t0 <= t[-1] + 1e-12):
        raise ValueError(f"t0={t0} outside trace domain [{t[0]}, {t[-1]}]")
    v0 = float(np.interp(t0, t, v))
    shift = min(v0, 0.0)
    out = np.where(t <= t0, np.maximum(v, 0.0), v - shift)
    # reference: clamped integration of the same increments
    ref = clamped_accumulate(np.array([max(v[0], 0.0)]), np.diff(v)[:, None])[:, 0]
    tol = 1e-9 * max(1.0, float(np.max(np.abs(v))))
    flagged = bool(np.max(np.abs(ref - out)) > tol) if v[0] >= 0 else True
    return UncertaintyTrace(t, out), flagged


def blend_controls(
    sched1: Sequence[Piece], sched2: Sequence[Piece], sigma: float
) -> list[Piece]:
    """Time-warped convex combination of two control schedules.

    Both schedules are stretched onto ``T_sigma = (1-sigma) T1 + sigma T2``
    and mixed with weights ``(1-sigma) T1/T_sigma`` and ``sigma T2/T_sigma``.
    The weights sum to one, so the blend stays within the unit ball and
    integrates to the same displacement as both inputs.
    """
    T1, T2 = schedule_duration(sched1), schedule_duration(sched2)
    Ts = (1 - sigma) * T1 + sigma * T2
    w1 = (1 - sigma) * T1 / Ts
    w2 = sigma * T2 / Ts
    return _mix(sched1, T1, w1, sched2, T2, w2, Ts)


def blend_controls_unweighted(sched1, sched2, sigma: float) -> list[Piece]:
    """Same time warp with plain weights ``1-sigma`` and ``sigma``.

    Kept for comparison: it misses the common endpoint whenever ``T1 != T2``.
    """
    T1, T2 = schedule_duration(sched1), schedule_duration(sched2)
    Ts = (1 - sigma) * T1 + sigma * T2
    return _mix(sched1, T1, 1 - sigma, sched2, T2, sigma, Ts)


def _mix(sched1, T1, w1, sched2, T2, w2, Ts) -> list[Piece]:
    def breaks(sched, T):
        b = np.cumsum([0.0] + [d for d, _ in sched]) * (Ts / T)
        b[-1] = Ts  # both warped schedules must end on the same grid point
        return b

    b1, b2 = breaks(sched1, T1), breaks(sched2, T2)
    grid = np.unique(np.concatenate([b1, b2]))
    out: list[Piece] = []
    for a, b in zip(grid[:-1], grid[1:]):
        if b - a <= 1e-15:
            continue
        m = 0.5 * (a + b)
        i1 = min(np.searchsorted(b1, m, side="right") - 1, len(sched1) - 1)
        i2 = min(np.searchsorted(b2, m, side="right") - 1, len(sched2) - 1)
        u = w1 * np.asarray(sched1[i1][1]) + w2 * np.asarray(sched2[i2][1])
        out.append((float(b - a), (float(u[0]), float(u[1]))))
    return out


def reverse_schedule(schedule: Sequence[Piece]) -> list[Piece]:
    return [(d, (-u[0], -u[1])) for d, u in reversed(schedule)]
