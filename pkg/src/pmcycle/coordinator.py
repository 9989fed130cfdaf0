"""Bilevel outer loop: boundary angles, cycle bookkeeping and dual gradients.

Every visit ``k`` is described by an entrance angle ``phi_k`` on the sensing
circle (radius ``r``) and a departure angle ``psi_k`` on the inner circle
(radius ``delta``) of its target.  The period of a steady-state cycle is

    T = sum_k T_k*(phi_k, psi_k, R_k) + Delta_k,

with ``T_k*`` the optimal draining time and ``Delta_k`` the straight switching
leg from the departure point of visit k to the entrance point of visit k+1.
Gradients with respect to the angles come from the draining duals and the
analytic leg derivatives; the angles are then moved by gradient descent with
a diminishing step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import sim
from .draining import DrainingProblem, DrainingSolution, DrainingSolveError, solve_draining
from .model import AgentState, Scenario, TargetSpec, circle_point, circle_tangent
from .nlp import NlpOptions

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundaryAngles:
    """Entrance angles ``phi`` and departure angles ``psi``, one per visit."""

    phi: tuple[float, ...]
    psi: tuple[float, ...]

    def __post_init__(self):
        phi = tuple(float(v) for v in self.phi)
        psi = tuple(float(v) for v in self.psi)
        if len(phi) != len(psi):
            raise ValueError("phi and psi must have one entry per visit")
        if not all(math.isfinite(v) for v in phi + psi):
            raise ValueError("angles must be finite")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "psi", psi)

    @property
    def K(self) -> int:
        return len(self.phi)

    def as_vector(self) -> np.ndarray:
        """Stacked ``(phi_1..phi_K, psi_1..psi_K)``."""
        return np.array(self.phi + self.psi)

    @classmethod
    def from_vector(cls, v) -> "BoundaryAngles":
        v = np.asarray(v, dtype=float)
        K = v.size // 2
        return cls(tuple(v[:K]), tuple(v[K:]))

    def wrapped(self) -> np.ndarray:
        """Angles reduced to [0, 2pi) for comparisons."""
        return np.mod(self.as_vector(), 2 * math.pi)

    def distance(self, other: "BoundaryAngles") -> float:
        """Largest angular difference, modulo 2pi."""
        d = np.mod(self.as_vector() - other.as_vector() + math.pi, 2 * math.pi) - math.pi
        return float(np.max(np.abs(d), initial=0.0))


@dataclass(frozen=True)
class BilevelOptions:
    alpha0: float = 0.2
    decay: float = 0.1
    tol_grad: float = 1e-3
    tol_R: float = 1e-4
    max_cycles: int = 200
    coupling: bool = False
    nodes: int = 20
    dt: float = 1e-3
    solver: Optional[NlpOptions] = None

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError("alpha0 must be positive")
        if not self.decay >= 0:
            raise ValueError("decay must be nonnegative")
        if not (self.tol_grad > 0 and self.tol_R > 0):
            raise ValueError("tolerances must be positive")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be at least 1")

    def step(self, n: int) -> float:
        return self.alpha0 / (1.0 + self.decay * n)


# --------------------------------------------------------------------------
# geometry
# --------------------------------------------------------------------------

def entrance_point(target: TargetSpec, phi: float) -> np.ndarray:
    return circle_point(target.x, target.r, phi)


def departure_point(target: TargetSpec, psi: float) -> np.ndarray:
    return circle_point(target.x, target.delta, psi)


def initialize_angles(scenario: Scenario) -> BoundaryAngles:
    """Point every departure at the next target and every entrance at the previous one."""
    K = scenario.K
    if K < 2:
        raise ValueError("angle initialization needs a sequence of at least two visits")
    phi = np.zeros(K)
    psi = np.zeros(K)
    for k in range(K):
        v = scenario.visit_target(k + 1).x - scenario.visit_target(k).x
        psi[k] = math.atan2(v[1], v[0])
        phi[(k + 1) % K] = math.atan2(-v[1], -v[0])
    return BoundaryAngles(tuple(phi), tuple(psi))


def visit_points(scenario: Scenario, angles: BoundaryAngles) -> tuple[list[np.ndarray], list[np.ndarray]]:
    ent = [entrance_point(scenario.visit_target(k), angles.phi[k]) for k in range(scenario.K)]
    dep = [departure_point(scenario.visit_target(k), angles.psi[k]) for k in range(scenario.K)]
    return ent, dep


def switch_segment(a, b, da=None, db=None) -> tuple[float, float, float]:
    """Straight switching leg from ``a`` to ``b``.

    Returns ``(Delta, dDelta_a, dDelta_b)`` where the derivatives are taken
    along the directions ``da`` and ``db`` (usually circle tangents).  At zero
    length the derivative is the subgradient 0.
    """
    d = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
    L = float(np.linalg.norm(d))
    if L == 0.0:
        log.debug("zero-length switching leg: subgradient 0 used")
        return 0.0, 0.0, 0.0
    v = d / L
    ga = 0.0 if da is None else float(-v @ np.asarray(da, dtype=float))
    gb = 0.0 if db is None else float(v @ np.asarray(db, dtype=float))
    return L, ga, gb


# --------------------------------------------------------------------------
# uncertainty gathered while crossing the annulus
# --------------------------------------------------------------------------

def epsilon_annulus(target: TargetSpec, inner_angle: float, outer_angle: float) -> float:
    """Uncertainty accumulated on the straight segment from the inner circle
    (angle ``inner_angle``) to the sensing circle (angle ``outer_angle``)."""
    A, B, r = target.A, target.B, target.r
    d = target.delta
    c = math.cos(outer_angle - inner_angle)
    D = math.sqrt(max(r * r + d * d - 2 * r * d * c, 0.0))
    k = B / r**2
    return (D * (A - B) + D * k * d * d + D * k * (r * d * c - d * d)
            + D * k / 3.0 * (r * r + d * d - 2 * r * d * c))


def epsilon_annulus_uncorrected(target: TargetSpec, inner_angle: float, outer_angle: float) -> float:
    """The closed form without the ``delta^2 * Delta * B / r^2`` term (kept for regression tests)."""
    A, B, r = target.A, target.B, target.r
    d = target.delta
    c = math.cos(outer_angle - inner_angle)
    D = math.sqrt(max(r * r + d * d - 2 * r * d * c, 0.0))
    k = B / r**2
    return D * (A - B) + D * k * (r * d * c - d * d) + D * k / 3.0 * (r * r + d * d - 2 * r * d * c)


def epsilon_partials(target: TargetSpec, inner_angle: float, outer_angle: float) -> tuple[float, float]:
    """``(d eps / d inner_angle, d eps / d outer_angle)``."""
    A, B, r = target.A, target.B, target.r
    d = target.delta
    th = outer_angle - inner_angle
    c, s = math.cos(th), math.sin(th)
    D = math.sqrt(max(r * r + d * d - 2 * r * d * c, 0.0))
    if D == 0.0:
        return 0.0, 0.0
    dD = r * d * s / D
    # eps = D (A - B) + (B d / r) D c + B D^3 / (3 r^2)
    de = dD * (A - B) + B * d / r * (dD * c - D * s) + B * D * D * dD / r**2
    return -de, de


class LegCrossing(NamedTuple):
    """Where a leg leaving a target's inner circle crosses its annulus."""

    inner_angle: float  # angle of the last exit from the inner disk
    outer_angle: float  # angle of the sensing-circle crossing
    length: float  # full leg length
    outside: float  # leg length beyond the sensing circle
    d_inner: np.ndarray  # derivatives w.r.t. (start angle, end angle)
    d_outer: np.ndarray
    d_length: np.ndarray
    d_outside: np.ndarray


def leg_crossing(target: TargetSpec, psi: float, end, end_tangent=None) -> LegCrossing:
    """Geometry of the leg from the departure point at ``psi`` to ``end``.

    The leg may pass back through the inner disk; the uncertainty is then
    clamped at zero until the last exit, so the annulus piece starts there.
    ``end_tangent`` is d(end)/d(end angle); derivatives with respect to the
    start angle ``psi`` and the end angle are returned as 2-vectors.
    """
    r, dl = target.r, target.delta
    x = target.x
    a = departure_point(target, psi) - x
    b = np.asarray(end, dtype=float) - x
    dvec = b - a
    L = float(np.linalg.norm(dvec))
    if L == 0.0:
        raise ValueError("leg has zero length")
    v = dvec / L
    av = float(a @ v)
    t_r = -av + math.sqrt(max(av * av - dl * dl + r * r, 0.0))
    t_r = min(t_r, L)
    w = a + t_r * v
    back = av < 0.0
    t_d = -2.0 * av if back else 0.0
    a_eff = a + t_d * v
    inner = math.atan2(a_eff[1], a_eff[0])
    outer = math.atan2(w[1], w[0])

    tangents = [circle_tangent(dl, psi), np.zeros(2)]
    das = [tangents[0], np.zeros(2)]
    dbs = [np.zeros(2), np.zeros(2) if end_tangent is None else np.asarray(end_tangent, dtype=float)]
    d_inner = np.zeros(2)
    d_outer = np.zeros(2)
    d_len = np.zeros(2)
    d_out = np.zeros(2)
    for i in range(2):
        da, db = das[i], dbs[i]
        dd = db - da
        dL = float(v @ dd)
        dv = (dd - v * dL) / L
        dt_r = -float(w @ (da + t_r * dv)) / float(w @ v)
        dw = da + dt_r * v + t_r * dv
        d_outer[i] = (w[0] * dw[1] - w[1] * dw[0]) / float(w @ w)
        if back:
            dt_d = -2.0 * float(da @ v + a @ dv)
            dae = da + dt_d * v + t_d * dv
        else:
            dae = da
        d_inner[i] = (a_eff[0] * dae[1] - a_eff[1] * dae[0]) / float(a_eff @ a_eff)
        d_len[i] = dL
        d_out[i] = dL - dt_r
    return LegCrossing(inner, outer, L, L - t_r, d_inner, d_outer, d_len, d_out)


def _previous_visit(scenario: Scenario, k: int) -> int:
    """Index j < k (possibly negative, i.e. previous cycle) of the last visit to target i_k."""
    i = scenario.sequence[k]
    for j in range(k - 1, k - scenario.K - 1, -1):
        if scenario.sequence[j % scenario.K] == i:
            return j
    raise ValueError(f"target of visit {k} is never drained")  # pragma: no cover - sequence covers it


def predicted_arrival_uncertainty(
    scenario: Scenario,
    angles: BoundaryAngles,
    drain_times: Sequence[float],
    k: int,
) -> float:
    """Arrival uncertainty of visit ``k`` implied by one steady-state cycle.

    The target was drained to zero when it was last left (departure point on
    the inner circle); it then gathers ``eps`` while the leg crosses its
    annulus and grows at rate ``A`` during all time spent outside its disk
    until the entrance of visit ``k``.
    """
    drain_times = np.asarray(drain_times, dtype=float)
    if drain_times.shape != (scenario.K,) or not np.all(np.isfinite(drain_times)):
        raise ValueError("drain times of every visit in the previous cycle are required")
    val, _ = _arrival_and_gradient(scenario, angles, drain_times, k, None)
    return val


def _arrival_and_gradient(scenario, angles, drain_times, k, duals):
    """Predicted arrival uncertainty of visit k and, if ``duals`` (list of
    (lambda_phi, lambda_psi) per visit) is given, its gradient w.r.t. the
    stacked angle vector with every other visit's arrival held fixed."""
    K = scenario.K
    tg = scenario.visit_target(k)
    j = _previous_visit(scenario, k)
    grad = np.zeros(2 * K)
    jm = j % K
    nxt = (j + 1) % K
    end_t = scenario.visit_target(nxt)
    end = entrance_point(end_t, angles.phi[nxt])
    cross = leg_crossing(tg, angles.psi[jm], end, circle_tangent(end_t.r, angles.phi[nxt]))
    eps = epsilon_annulus(tg, cross.inner_angle, cross.outer_angle)
    e_in, e_out = epsilon_partials(tg, cross.inner_angle, cross.outer_angle)
    outside = cross.outside
    # d/d psi_j and d/d phi_{j+1}
    grad[K + jm] += e_in * cross.d_inner[0] + e_out * cross.d_outer[0] + tg.A * cross.d_outside[0]
    grad[nxt] += e_in * cross.d_inner[1] + e_out * cross.d_outer[1] + tg.A * cross.d_outside[1]
    for m in range(j + 1, k):
        mm = m % K
        outside += drain_times[mm]
        if duals is not None:
            lam_phi, lam_psi = duals[mm]
            tm = scenario.visit_target(mm)
            grad[mm] += tg.A * float(lam_phi @ circle_tangent(tm.r, angles.phi[mm]))
            grad[K + mm] += tg.A * float(lam_psi @ circle_tangent(tm.delta, angles.psi[mm]))
        m1 = (m + 1) % K
        t1 = scenario.visit_target(m1)
        tm = scenario.visit_target(mm)
        a = departure_point(tm, angles.psi[mm])
        b = entrance_point(t1, angles.phi[m1])
        D, ga, gb = switch_segment(a, b, circle_tangent(tm.delta, angles.psi[mm]),
                                   circle_tangent(t1.r, angles.phi[m1]))
        outside += D
        grad[K + mm] += tg.A * ga
        grad[m1] += tg.A * gb
    return eps + tg.A * outside, grad


def arrival_sensitivities(scenario, angles, drain_times, duals) -> np.ndarray:
    """``K x 2K`` matrix of d(arrival uncertainty of visit k)/d(angles)."""
    return np.array([_arrival_and_gradient(scenario, angles, np.asarray(drain_times, float), k, duals)[1]
                     for k in range(scenario.K)])


def switch_times(scenario: Scenario, angles: BoundaryAngles) -> np.ndarray:
    ent, dep = visit_points(scenario, angles)
    K = scenario.K
    return np.array([float(np.linalg.norm(ent[(k + 1) % K] - dep[k])) for k in range(K)])


def cycle_period(scenario: Scenario, angles: BoundaryAngles, drain_times) -> float:
    return float(np.sum(drain_times) + np.sum(switch_times(scenario, angles)))


# --------------------------------------------------------------------------
# gradients
# --------------------------------------------------------------------------

def cycle_gradient(
    scenario: Scenario,
    angles: BoundaryAngles,
    solutions: Sequence[DrainingSolution],
    coupling: bool = False,
) -> np.ndarray:
    """Gradient of the period with respect to ``(phi_1..phi_K, psi_1..psi_K)``.

    Each draining time contributes its entrance/departure duals projected on
    the circle tangents; each switching leg contributes the derivative of its
    length.  With ``coupling`` the arrival uncertainties follow the angles
    (eps and travel times), weighted by the draining multipliers.
    """
    K = scenario.K
    if len(solutions) != K:
        raise ValueError(f"need {K} draining solutions, got {len(solutions)}")
    g = np.zeros(2 * K)
    for k, sol in enumerate(solutions):
        if sol is None or sol.lambda_phi is None or sol.lambda_psi is None:
            raise ValueError(f"missing duals for visit {k + 1}")
        tg = scenario.visit_target(k)
        g[k] += float(sol.lambda_phi @ circle_tangent(tg.r, angles.phi[k]))
        g[K + k] += float(sol.lambda_psi @ circle_tangent(tg.delta, angles.psi[k]))
    for k in range(K):
        k1 = (k + 1) % K
        tk, t1 = scenario.visit_target(k), scenario.visit_target(k1)
        _, ga, gb = switch_segment(
            departure_point(tk, angles.psi[k]), entrance_point(t1, angles.phi[k1]),
            circle_tangent(tk.delta, angles.psi[k]), circle_tangent(t1.r, angles.phi[k1]),
        )
        g[K + k] += ga
        g[k1] += gb
    if coupling:
        drain = np.array([s.total_time for s in solutions])
        duals = [(s.lambda_phi, s.lambda_psi) for s in solutions]
        S = arrival_sensitivities(scenario, angles, drain, duals)
        lam_R = np.array([s.lambda_R for s in solutions])
        g += lam_R @ S
    return g


def update_angles(angles: BoundaryAngles, gradient, n: int, options: BilevelOptions) -> BoundaryAngles:
    """One diminishing-step gradient step ``alpha0 / (1 + c n)``."""
    gradient = np.asarray(gradient, dtype=float)
    if not np.all(np.isfinite(gradient)):
        raise ValueError("gradient must be finite")
    return BoundaryAngles.from_vector(angles.as_vector() - options.step(n) * gradient)


# --------------------------------------------------------------------------
# the cycle loop
# --------------------------------------------------------------------------

class BilevelError(RuntimeError):
    def __init__(self, cycle: int, visit: int, cause: Exception):
        super().__init__(f"draining solve failed in cycle {cycle} at visit {visit + 1}: {cause}")
        self.cycle = cycle
        self.visit = visit
        self.cause = cause


class BilevelResult(NamedTuple):
    angles: BoundaryAngles
    record: sim.CycleRecord
    history: list
    converged: bool
    trajectory: sim.Trajectory
    solutions: list


def default_start(scenario: Scenario, angles: Optional[BoundaryAngles] = None) -> AgentState:
    """Agent starts on the entrance point of the first visit."""
    angles = angles or _safe_initial(scenario)
    p = entrance_point(scenario.visit_target(0), angles.phi[0])
    return AgentState((p[0], p[1]), 0.0)


def _safe_initial(scenario: Scenario) -> BoundaryAngles:
    if scenario.K >= 2:
        return initialize_angles(scenario)
    return BoundaryAngles((math.pi,), (0.0,))


def run_cycle(
    scenario: Scenario,
    angles: BoundaryAngles,
    state: AgentState,
    R,
    options: BilevelOptions,
    warm: Optional[Sequence[Optional[DrainingSolution]]] = None,
    cycle_index: int = 0,
) -> tuple[sim.CycleRecord, sim.Trajectory, list[DrainingSolution]]:
    """Fly one cycle event by event: leg to each entrance, measure the
    arrival uncertainty, solve the draining problem and replay it."""
    K = scenario.K
    warm = list(warm) if warm is not None else [None] * K
    ent, dep = visit_points(scenario, angles)
    R = np.asarray(R, dtype=float)
    parts: list[sim.Trajectory] = []
    arrivals = np.zeros(K)
    departures = np.zeros(K)
    drain = np.zeros(K)
    legs = np.zeros(K)
    cpu = np.zeros(K)
    sols: list[DrainingSolution] = []
    pos = np.array(state.position)
    t = state.time
    for k in range(K):
        # switching leg into visit k (the last leg of the previous cycle for k = 0)
        leg_visit = (k - 1) % K
        sched = sim.straight_leg(pos, ent[k])
        if sched:
            tr = sim.integrate_hybrid(scenario, AgentState(tuple(pos), t), R, sched, options.dt,
                                      f"switching_{leg_visit + 1}")
            parts.append(tr)
            R, t = tr.R[-1].copy(), float(tr.t[-1])
            legs[leg_visit] += sim.schedule_duration(sched)
        pos = ent[k].copy()
        idx = scenario.visit_index(k)
        arrivals[k] = R[idx]
        problem = DrainingProblem(scenario.visit_target(k), tuple(ent[k]), tuple(dep[k]), float(R[idx]),
                                  options.nodes)
        try:
            sol = solve_draining(problem, warm_start=warm[k], options=options.solver)
        except (DrainingSolveError, ValueError) as err:
            raise BilevelError(cycle_index, k, err) from err
        sols.append(sol)
        cpu[k] = sol.cpu_time
        tr = sim.integrate_hybrid(scenario, AgentState(tuple(pos), t), R, sol.draining_schedule(), sol.step,
                                  f"draining_{k + 1}")
        parts.append(tr)
        R, t = tr.R[-1].copy(), float(tr.t[-1])
        drain[k] = sol.total_time
        departures[k] = R[idx]
        pos = dep[k].copy()
    traj = sim.Trajectory.concat(parts)
    # the model period uses the leg K -> 1 of the current angles
    period = float(drain.sum() + switch_times(scenario, angles).sum())
    record = sim.CycleRecord(
        arrival_uncertainty=arrivals,
        drain_times=drain,
        switch_times=switch_times(scenario, angles),
        period=period,
        wall_time=float(traj.t[-1] - traj.t[0]) if len(traj) else 0.0,
        angles=(np.array(angles.phi), np.array(angles.psi)),
        duals=[(s.lambda_phi.copy(), s.lambda_psi.copy(), s.lambda_R) for s in sols],
        cpu_times=cpu,
        departure_uncertainty=departures,
    )
    return record, traj, sols


def run_bilevel(
    scenario: Scenario,
    options: Optional[BilevelOptions] = None,
    initial_angles: Optional[BoundaryAngles] = None,
    start: Optional[AgentState] = None,
) -> BilevelResult:
    """Alternate cycles and angle updates until the gradient and the
    arrival-uncertainty residual are both below tolerance."""
    opts = options or BilevelOptions()
    angles = initial_angles or _safe_initial(scenario)
    if angles.K != scenario.K:
        raise ValueError(f"expected {scenario.K} angle pairs, got {angles.K}")
    state = start or default_start(scenario, angles)
    R = np.array(scenario.initial_uncertainty, dtype=float)
    warm: list[Optional[DrainingSolution]] = [None] * scenario.K
    history: list[sim.CycleRecord] = []
    prev = None
    converged = False
    traj = None
    sols: list[DrainingSolution] = []
    for n in range(opts.max_cycles):
        record, traj, sols = run_cycle(scenario, angles, state, R, opts, warm, n)
        record.gradient = cycle_gradient(scenario, angles, sols, opts.coupling)
        record.residual = math.inf if prev is None else float(
            np.max(np.abs(record.arrival_uncertainty - prev)))
        history.append(record)
        if len(history) > 1 and record.period > history[-2].period + 1e-4:
            log.info("cycle %d: period increased %.6f -> %.6f", n, history[-2].period, record.period)
        if record.grad_norm <= opts.tol_grad and record.residual <= opts.tol_R:
            converged = True
            break
        prev = record.arrival_uncertainty
        end = traj.end
        state = AgentState((end.s[0], end.s[1]), end.t)
        R = end.R.copy()
        warm = sols
        angles = update_angles(angles, record.gradient, n, opts)
    return BilevelResult(angles, history[-1], history, converged, traj, sols)


# --------------------------------------------------------------------------
# finite-difference oracle for the assembled gradient
# --------------------------------------------------------------------------

def cycle_time_model(
    scenario: Scenario,
    angles: BoundaryAngles,
    arrivals,
    nodes: int = 20,
    solver: Optional[NlpOptions] = None,
    warm: Optional[Sequence[DrainingSolution]] = None,
    base: Optional[tuple[BoundaryAngles, np.ndarray]] = None,
) -> tuple[float, list[DrainingSolution]]:
    """Period ``sum_k T_k* + Delta_k`` with the arrival uncertainties given.

    With ``base = (angles0, drain_times0)`` the arrivals follow the angles
    through the predicted-arrival map (coupled protocol): each arrival is
    shifted by the change of its prediction relative to ``angles0``, with the
    intervening draining times re-solved at their own base arrivals.
    """
    K = scenario.K
    ent, dep = visit_points(scenario, angles)
    arrivals = np.asarray(arrivals, dtype=float)

    def solve_all(arr):
        out = []
        for k in range(K):
            p = DrainingProblem(scenario.visit_target(k), tuple(ent[k]), tuple(dep[k]), float(max(arr[k], 0.0)),
                                nodes)
            out.append(solve_draining(p, warm_start=None if warm is None else warm[k], options=solver))
        return out

    sols = solve_all(arrivals)
    if base is not None:
        angles0, drain0 = base
        drain = np.array([s.total_time for s in sols])
        shifted = np.array([
            arrivals[k] + predicted_arrival_uncertainty(scenario, angles, drain, k)
            - predicted_arrival_uncertainty(scenario, angles0, drain0, k)
            for k in range(K)
        ])
        sols = solve_all(shifted)
    T = sum(s.total_time for s in sols) + float(switch_times(scenario, angles).sum())
    return T, sols


def fd_cycle_gradient(
    scenario: Scenario,
    angles: BoundaryAngles,
    arrivals,
    eta: float = 1e-4,
    nodes: int = 20,
    solver: Optional[NlpOptions] = None,
    coupling: bool = False,
    warm: Optional[Sequence[DrainingSolution]] = None,
) -> np.ndarray:
    """Central differences of :func:`cycle_time_model` per angle."""
    base = None
    if coupling:
        _, sols0 = cycle_time_model(scenario, angles, arrivals, nodes, solver, warm)
        base = (angles, np.array([s.total_time for s in sols0]))
    v = angles.as_vector()
    g = np.zeros_like(v)
    for i in range(v.size):
        vals = []
        for sgn in (1.0, -1.0):
            w = v.copy()
            w[i] += sgn * eta
            T, _ = cycle_time_model(scenario, BoundaryAngles.from_vector(w), arrivals, nodes, solver, warm, base)
            vals.append(T)
        g[i] = (vals[0] - vals[1]) / (2 * eta)
    return g
