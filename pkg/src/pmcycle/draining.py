"""Minimum-time draining of one target, transcribed by direct multiple shooting.

The hybrid uncertainty dynamics are replaced by the smooth rate
``A - B (1 - |s - x|^2 / r^2)`` together with the terminal condition that the
relaxed uncertainty is nonpositive when the agent reaches the inner circle
(radius ``delta``).  The agent then travels straight to the departure point.

Decision vector (positions relative to the target center)::

    [s_0..s_N (2 each), R_0..R_N, u_0..u_{N-1} (2 each), t0, s0 (2)]

with Euler step ``h = t0 / N``.  When the departure point lies on the inner
circle the exit point is pinned to it (``s0 = departure``) instead of being
free on the circle; the two problems share their optimum but only the pinned
one is smooth there.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from . import sim
from .model import AgentState, Scenario, TargetSpec, circle_point, greedy_threshold
from .nlp import NlpOptions, NlpProblem, SolverReport, solve_nlp

T_MIN = 1e-3
COARSE_NODES = 20
ON_CIRCLE_TOL = 1e-9


class DrainingSolveError(RuntimeError):
    def __init__(self, message, report: SolverReport, iterate=None):
        super().__init__(f"{message}: {report}")
        self.report = report
        self.iterate = iterate


@dataclass(frozen=True)
class DrainingProblem:
    target: TargetSpec
    entrance: tuple[float, float]
    departure: tuple[float, float]
    arrival_uncertainty: float
    nodes: int = 20

    def __post_init__(self):
        object.__setattr__(self, "entrance", (float(self.entrance[0]), float(self.entrance[1])))
        object.__setattr__(self, "departure", (float(self.departure[0]), float(self.departure[1])))
        x, r = self.target.x, self.target.r
        de = float(np.linalg.norm(np.array(self.entrance) - x))
        if abs(de - r) > 1e-9 * max(1.0, r):
            raise ValueError(f"entrance point at distance {de} from the target, expected r={r}")
        dd = float(np.linalg.norm(np.array(self.departure) - x))
        if dd > r * (1 + 1e-9):
            raise ValueError(f"departure point at distance {dd} lies outside the sensing disk (r={r})")
        if not self.arrival_uncertainty >= 0:
            raise ValueError("arrival uncertainty must be nonnegative")
        if self.nodes < 2:
            raise ValueError("need at least 2 shooting nodes")

    @property
    def pinned(self) -> bool:
        """Departure on the inner circle: the exit point is the departure point."""
        dd = float(np.linalg.norm(np.array(self.departure) - self.target.x))
        d = self.target.delta
        return abs(dd - d) <= ON_CIRCLE_TOL * max(1.0, d)


class _Layout:
    def __init__(self, N: int):
        self.N = N
        self.s = np.arange(2 * (N + 1)).reshape(N + 1, 2)
        self.R = 2 * (N + 1) + np.arange(N + 1)
        self.u = 3 * (N + 1) + np.arange(2 * N).reshape(N, 2)
        self.t = 3 * (N + 1) + 2 * N
        self.s0 = self.t + 1 + np.arange(2)
        self.n = self.t + 3

    def unpack(self, z):
        return z[self.s], z[self.R], z[self.u], z[self.t], z[self.s0]


def transcribe(problem: DrainingProblem) -> NlpProblem:
    """Multiple-shooting NLP for ``problem`` in target-centered coordinates."""
    tg = problem.target
    x = tg.x
    return _transcribe(tg.A, tg.B, tg.r, tg.delta,
                       np.array(problem.entrance) - x, np.array(problem.departure) - x,
                       problem.arrival_uncertainty, problem.nodes, problem.pinned)


def _transcribe(A, B, r, delta, entrance, departure, R_arr, N, pinned) -> NlpProblem:
    L = _Layout(N)
    n = L.n
    kq = B / r**2
    me = 3 * N + 5 + (2 if pinned else 1)
    mi = N + 2
    js = np.arange(N)

    def objective(z):
        if pinned:
            return z[L.t]
        return z[L.t] + float(np.linalg.norm(departure - z[L.s0]))

    def gradient(z):
        g = np.zeros(n)
        g[L.t] = 1.0
        if not pinned:
            d = z[L.s0] - departure
            g[L.s0] = d / np.linalg.norm(d)
        return g

    def eq(z):
        S, R, U, t, s0 = L.unpack(z)
        h = t / N
        rate = A - B + kq * np.sum(S[:-1] ** 2, axis=1)
        c = np.empty(me)
        c[:2 * N] = (S[1:] - S[:-1] - h * U).ravel()
        c[2 * N:3 * N] = R[1:] - R[:-1] - h * rate
        c[3 * N:3 * N + 2] = S[0] - entrance
        c[3 * N + 2] = R[0] - R_arr
        c[3 * N + 3:3 * N + 5] = S[N] - s0
        if pinned:
            c[3 * N + 5:3 * N + 7] = s0 - departure
        else:
            c[3 * N + 5] = s0 @ s0 - delta**2
        return c

    # Jacobians and Hessian are assembled in coordinate form (duplicates add up)
    rows_sd = np.arange(2 * N)
    rr = 2 * N + js
    tail_rows = 3 * N + np.array([0, 1, 2, 3, 4, 3, 4])
    tail_cols = np.array([L.s[0, 0], L.s[0, 1], L.R[0], L.s[N, 0], L.s[N, 1], L.s0[0], L.s0[1]])
    tail_vals = np.array([1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0])
    eq_rows = np.concatenate([rows_sd, rows_sd, rows_sd, rows_sd, rr, rr, rr, rr, rr, tail_rows,
                              3 * N + 5 + np.arange(2) if pinned else np.full(2, 3 * N + 5)])
    eq_cols = np.concatenate([L.s[1:].ravel(), L.s[:-1].ravel(), L.u.ravel(), np.full(2 * N, L.t),
                              L.R[1:], L.R[:-1], L.s[:-1, 0], L.s[:-1, 1], np.full(N, L.t),
                              tail_cols, L.s0])

    def eq_jac(z):
        S, R, U, t, s0 = L.unpack(z)
        h = t / N
        vals = np.concatenate([
            np.ones(2 * N), -np.ones(2 * N), np.full(2 * N, -h), -U.ravel() / N,
            np.ones(N), -np.ones(N), -h * 2 * kq * S[:-1, 0], -h * 2 * kq * S[:-1, 1],
            -(A - B + kq * np.sum(S[:-1] ** 2, axis=1)) / N,
            tail_vals, np.ones(2) if pinned else 2 * s0,
        ])
        return sp.csr_matrix((vals, (eq_rows, eq_cols)), shape=(me, n))

    def ineq(z):
        U = z[L.u]
        g = np.empty(mi)
        g[:N] = np.sum(U**2, axis=1) - 1.0
        g[N] = z[L.R[N]]
        g[N + 1] = T_MIN - z[L.t]
        return g

    in_rows = np.concatenate([js, js, [N, N + 1]])
    in_cols = np.concatenate([L.u[:, 0], L.u[:, 1], [L.R[N], L.t]])

    def ineq_jac(z):
        U = z[L.u]
        vals = np.concatenate([2 * U[:, 0], 2 * U[:, 1], [1.0, -1.0]])
        return sp.csr_matrix((vals, (in_rows, in_cols)), shape=(mi, n))

    tcol_u = np.full(2 * N, L.t)
    tcol_s = np.full(2 * N, L.t)
    h_rows = np.concatenate([L.u.ravel(), tcol_u, L.s[:-1, 0], L.s[:-1, 1], L.s[:-1].ravel(), tcol_s,
                             L.u[:, 0], L.u[:, 1], np.repeat(L.s0, 2)])
    h_cols = np.concatenate([tcol_u, L.u.ravel(), L.s[:-1, 0], L.s[:-1, 1], tcol_s, L.s[:-1].ravel(),
                             L.u[:, 0], L.u[:, 1], np.tile(L.s0, 2)])

    def hess_lag(z, lam, mu):
        S, R, U, t, s0 = L.unpack(z)
        lam_s = lam[:2 * N]
        lam_R = lam[2 * N:3 * N]
        # s-defects: -h u  -> d2/(du dt) = -lam/N
        ut = -lam_s / N
        # R-defects: -h (A - B + kq |s|^2)
        diag = -lam_R * (t / N) * 2 * kq
        cross = (-lam_R[:, None] * 2 * kq * S[:-1] / N).ravel()
        block = np.zeros((2, 2))
        if not pinned:
            block += 2 * lam[3 * N + 5] * np.eye(2)
            d = s0 - departure
            nd = np.linalg.norm(d)
            w = d / nd
            block += (np.eye(2) - np.outer(w, w)) / nd
        vals = np.concatenate([ut, ut, diag, diag, cross, cross, 2 * mu[:N], 2 * mu[:N], block.ravel()])
        return sp.csr_matrix((vals, (h_rows, h_cols)), shape=(n, n))

    return NlpProblem(n, objective, gradient, eq, eq_jac, ineq, ineq_jac, hess_lag)


def equality_rows(problem: DrainingProblem) -> int:
    return 3 * problem.nodes + 5 + (2 if problem.pinned else 1)


@dataclass
class DrainingSolution:
    """Discretized optimum of one draining problem (absolute coordinates).

    ``lambda_phi`` and ``lambda_psi`` are the sensitivities of ``total_time``
    to the entrance and departure points; ``lambda_R`` is the multiplier of
    the draining inequality, which equals the sensitivity to the arrival
    uncertainty.
    """

    node_positions: np.ndarray
    node_uncertainty: np.ndarray
    node_controls: np.ndarray
    inner_exit_time: float
    inner_exit_point: np.ndarray
    terminal_leg_time: float
    total_time: float
    lambda_phi: np.ndarray
    lambda_psi: np.ndarray
    lambda_R: float
    lambda_circle: float
    report: SolverReport
    pinned: bool
    zero_leg: bool = False
    cpu_time: float = 0.0
    _z: Optional[np.ndarray] = field(default=None, repr=False)
    _lam: Optional[np.ndarray] = field(default=None, repr=False)
    _mu: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def nodes(self) -> int:
        return self.node_controls.shape[0]

    @property
    def step(self) -> float:
        return self.inner_exit_time / self.nodes

    @property
    def node_times(self) -> np.ndarray:
        return self.step * np.arange(self.nodes + 1)

    def draining_schedule(self) -> list[sim.Piece]:
        h = self.step
        return [(h, (float(u[0]), float(u[1]))) for u in self.node_controls]

    def terminal_schedule(self, departure) -> list[sim.Piece]:
        return sim.straight_leg(self.inner_exit_point, departure)


def initial_guess(problem: DrainingProblem) -> np.ndarray:
    """Straight in to the center, dwell as long as greedy would, out to the exit guess."""
    tg = problem.target
    N = problem.nodes
    L = _Layout(N)
    x = tg.x
    A, B, r, d = tg.A, tg.B, tg.r, tg.delta
    e = np.array(problem.entrance) - x
    dep = np.array(problem.departure) - x
    nd = float(np.linalg.norm(dep))
    # departure at the center: leave opposite to the entrance
    s0 = dep / nd * d if nd > 1e-9 * r else -e / r * d
    accum_in = (A - 2 * B / 3) * r
    accum_out = (A - B) * d + B * d**3 / (3 * r**2)
    dwell = max(0.0, (problem.arrival_uncertainty + accum_in + accum_out) / (B - A))
    speed = 0.95
    t_in, t_out = r / speed, d / speed
    # lengthen the dwell until the Euler rollout itself drains (with a small margin)
    for _ in range(20):
        S, U, R, T = _rollout_guess(tg, problem, e, s0, t_in, dwell, t_out, N)
        if R[-1] <= -1e-3 * max(1.0, problem.arrival_uncertainty):
            break
        dwell += (R[-1] + 1e-2 * max(1.0, problem.arrival_uncertainty)) / (B - A)
    z = np.zeros(L.n)
    z[L.s] = S
    z[L.R] = R
    z[L.u] = U
    z[L.t] = T
    z[L.s0] = s0
    return z


DEFAULT_OPTIONS = NlpOptions(tol=1e-6, constr_tol=1e-8, max_iter=500)
WARM_OPTIONS = NlpOptions(tol=1e-6, constr_tol=1e-8, max_iter=500, mu_init=1e-4, slack_push=1e-4)


def solve_draining(
    problem: DrainingProblem,
    warm_start: Optional[DrainingSolution] = None,
    options: Optional[NlpOptions] = None,
) -> DrainingSolution:
    nlp = transcribe(problem)
    lam0 = mu0 = None
    use_warm = (
        warm_start is not None
        and warm_start._z is not None
        and warm_start.nodes == problem.nodes
        and warm_start.pinned == problem.pinned
    )
    if use_warm:
        z0 = _shift_warm(warm_start, problem)
        lam0, mu0 = warm_start._lam, warm_start._mu
        opts = options or WARM_OPTIONS
    elif problem.nodes >= 2 * COARSE_NODES:
        # mesh refinement: a coarse solve provides primal and dual starting values
        coarse = solve_draining(replace(problem, nodes=COARSE_NODES), options=options)
        z0, lam0, mu0 = _refine(coarse, problem)
        use_warm = True
        opts = options or WARM_OPTIONS
    else:
        z0 = initial_guess(problem)
        opts = options or DEFAULT_OPTIONS
    tic = time.process_time()
    res = solve_nlp(nlp, z0, opts, lam0=lam0, mu0=mu0)
    if not res.report.converged and use_warm:
        res = solve_nlp(nlp, initial_guess(problem), options or DEFAULT_OPTIONS)
    cpu = time.process_time() - tic
    if not res.report.converged:
        raise DrainingSolveError("draining NLP did not converge", res.report, res.x)
    return _package(problem, res, cpu)


def _rollout_guess(tg, problem, e, s0, t_in, dwell, t_out, N):
    A, B, r = tg.A, tg.B, tg.r
    T = max(t_in + dwell + t_out, T_MIN * 10)
    times = np.linspace(0.0, T, N + 1)
    S = np.empty((N + 1, 2))
    for j, tj in enumerate(times):
        if tj <= t_in:
            S[j] = e * (1 - tj / t_in)
        elif tj <= t_in + dwell:
            S[j] = 0.0
        else:
            S[j] = s0 * min(1.0, (tj - t_in - dwell) / t_out)
    S[N] = s0
    h = T / N
    U = (S[1:] - S[:-1]) / h
    U /= np.maximum(1.0, np.linalg.norm(U, axis=1) / 0.999)[:, None]
    R = np.empty(N + 1)
    R[0] = problem.arrival_uncertainty
    rate = A - B + B / r**2 * np.sum(S[:-1] ** 2, axis=1)
    R[1:] = R[0] + np.cumsum(h * rate)
    return S, U, R, T


def _refine(coarse: DrainingSolution, problem: DrainingProblem):
    """Interpolate a coarse solution (primal and dual) onto ``problem.nodes`` intervals."""
    Nc, N = coarse.nodes, problem.nodes
    Lc, L = _Layout(Nc), _Layout(N)
    zc = coarse._z
    T = zc[Lc.t]
    tc = np.linspace(0.0, T, Nc + 1)
    tf = np.linspace(0.0, T, N + 1)
    Sc = zc[Lc.s]
    S = np.column_stack([np.interp(tf, tc, Sc[:, 0]), np.interp(tf, tc, Sc[:, 1])])
    h = T / N
    U = (S[1:] - S[:-1]) / h
    U /= np.maximum(1.0, np.linalg.norm(U, axis=1) / 0.999)[:, None]
    tg = problem.target
    rate = tg.A - tg.B + tg.B / tg.r**2 * np.sum(S[:-1] ** 2, axis=1)
    z = np.zeros(L.n)
    z[L.s] = S
    z[L.R[0]] = problem.arrival_uncertainty
    z[L.R[1:]] = problem.arrival_uncertainty + np.cumsum(h * rate)
    z[L.u] = U
    z[L.t] = T
    z[L.s0] = zc[Lc.s0]
    # interval j of the fine grid lies inside coarse interval idx[j]
    idx = np.minimum((np.arange(N) + 0.5) * Nc // N, Nc - 1).astype(int)
    lc, mc = coarse._lam, coarse._mu
    lam = np.concatenate([lc[:2 * Nc].reshape(Nc, 2)[idx].ravel(), lc[2 * Nc:3 * Nc][idx], lc[3 * Nc:]])
    # control-bound multipliers scale with the step length
    mu = np.concatenate([mc[:Nc][idx] * Nc / N, mc[Nc:]])
    return z, lam, mu


def _shift_warm(warm: DrainingSolution, problem: DrainingProblem) -> np.ndarray:
    """Previous iterate moved to the new boundary points (relative coordinates)."""
    z = warm._z.copy()
    L = _Layout(problem.nodes)
    x = problem.target.x
    S = z[L.s]
    e_new = np.array(problem.entrance) - x
    shift0 = e_new - S[0]
    if problem.pinned:
        s0_new = np.array(problem.departure) - x
    else:
        s0_new = z[L.s0]
    shiftN = s0_new - S[-1]
    w = np.linspace(0.0, 1.0, problem.nodes + 1)[:, None]
    S = S + (1 - w) * shift0 + w * shiftN
    h = z[L.t] / problem.nodes
    z[L.s] = S
    z[L.s0] = S[-1]
    U = (S[1:] - S[:-1]) / h
    scale = np.maximum(1.0, np.linalg.norm(U, axis=1) / 0.999)
    z[L.u] = U / scale[:, None]
    z[L.R[0]] = problem.arrival_uncertainty
    tg = problem.target
    rate = tg.A - tg.B + tg.B / tg.r**2 * np.sum(S[:-1] ** 2, axis=1)
    z[L.R[1:]] = problem.arrival_uncertainty + np.cumsum(h * rate)
    return z


def _package(problem: DrainingProblem, res, cpu: float) -> DrainingSolution:
    N = problem.nodes
    L = _Layout(N)
    x = problem.target.x
    z, lam, mu = res.x, res.lam, res.mu
    S, R, U, t, s0 = L.unpack(z)
    dep = np.array(problem.departure)
    s0_abs = s0 + x
    leg = float(np.linalg.norm(dep - s0_abs))
    lambda_phi = -lam[3 * N:3 * N + 2]
    zero_leg = False
    if problem.pinned:
        lambda_psi = -lam[3 * N + 5:3 * N + 7]
        lambda_circle = math.nan
        leg = 0.0
    else:
        if leg > 0:
            lambda_psi = (dep - s0_abs) / leg
        else:
            lambda_psi = np.zeros(2)
            zero_leg = True
        lambda_circle = float(lam[3 * N + 5])
    return DrainingSolution(
        node_positions=S + x,
        node_uncertainty=R.copy(),
        node_controls=U.copy(),
        inner_exit_time=float(t),
        inner_exit_point=s0_abs,
        terminal_leg_time=leg,
        total_time=float(t) + leg,
        lambda_phi=lambda_phi,
        lambda_psi=lambda_psi,
        lambda_R=float(mu[N]),
        lambda_circle=lambda_circle,
        report=res.report,
        pinned=problem.pinned,
        zero_leg=zero_leg,
        cpu_time=cpu,
        _z=z.copy(),
        _lam=lam.copy(),
        _mu=mu.copy(),
    )


def greedy_closed_form(problem: DrainingProblem) -> tuple[float, list[sim.Piece]]:
    """Optimal time and radial in / dwell / radial out schedule for large arrival uncertainty.

    Valid when both boundary points lie on the sensing circle and the arrival
    uncertainty is at least :func:`greedy_threshold`.
    """
    tg = problem.target
    x, r = tg.x, tg.r
    for p in (problem.entrance, problem.departure):
        if abs(np.linalg.norm(np.array(p) - x) - r) > 1e-9 * max(1.0, r):
            raise ValueError("greedy closed form needs entrance and departure on the sensing circle")
    thr = greedy_threshold(tg)
    Rc = problem.arrival_uncertainty
    if Rc < thr - 1e-12 * max(1.0, thr):
        raise ValueError(f"arrival uncertainty {Rc} below the greedy threshold {thr}")
    T = (-Rc + thr) / (tg.A - tg.B) + 2 * r
    dwell = max(0.0, T - 2 * r)
    u_in = (x - np.array(problem.entrance)) / r
    u_out = (np.array(problem.departure) - x) / r
    schedule = [(r, tuple(u_in)), (dwell, (0.0, 0.0)), (r, tuple(u_out))]
    return T, [p for p in schedule if p[0] > 0]


def greedy_solution(problem: DrainingProblem, nodes: Optional[int] = None) -> DrainingSolution:
    """Closed-form greedy path expressed in :class:`DrainingSolution` form.

    The part up to the outbound inner-circle crossing is sampled on an even
    grid; the uncertainty follows the same Euler rule as the transcription.
    """
    tg = problem.target
    N = nodes or problem.nodes
    T, schedule = greedy_closed_form(problem)
    d, r = tg.delta, tg.r
    t0 = T - (r - d)
    times = np.linspace(0.0, t0, N + 1)
    x = tg.x
    e = np.array(problem.entrance)
    out_dir = (np.array(problem.departure) - x) / r

    def pos(t):
        if t <= r:
            return e + (x - e) * (t / r)
        if t <= T - r:
            return x.copy()
        return x + out_dir * (t - (T - r))

    S = np.array([pos(t) for t in times])
    h = t0 / N
    U = np.array([_avg_control(schedule, a, b) for a, b in zip(times[:-1], times[1:])])
    S = np.vstack([S[:1], S[0] + np.cumsum(h * U, axis=0)])
    rate = tg.A - tg.B + tg.B / r**2 * np.sum((S[:-1] - x) ** 2, axis=1)
    R = np.concatenate([[problem.arrival_uncertainty], problem.arrival_uncertainty + np.cumsum(h * rate)])
    rep = SolverReport("converged", 0, 0.0, 0.0, 0.0, 0.0)
    leg = float(np.linalg.norm(np.array(problem.departure) - S[-1]))
    return DrainingSolution(S, R, U, t0, S[-1], leg, t0 + leg, np.zeros(2), out_dir,
                            math.nan, math.nan, rep, False)


def _avg_control(schedule, a, b) -> np.ndarray:
    acc = np.zeros(2)
    t = 0.0
    for d, u in schedule:
        lo, hi = max(a, t), min(b, t + d)
        if hi > lo:
            acc += (hi - lo) * np.asarray(u)
        t += d
    return acc / (b - a)


@dataclass
class Diagnostic:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class VerificationReport:
    checks: list[Diagnostic]
    replay: Optional[sim.Trajectory] = None

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> Diagnostic:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failed(self) -> list[str]:
        return [c.name for c in self.checks if not c.passed]


def draining_tol(problem: DrainingProblem) -> float:
    return 1e-6 * max(problem.arrival_uncertainty, 1.0)


def single_target_scenario(target: TargetSpec, R: float = 0.0) -> Scenario:
    return Scenario((target,), (target.id,), (R,))


def replay(solution: DrainingSolution, problem: DrainingProblem, dt: Optional[float] = None,
           leg_dt: float = 1e-3) -> sim.Trajectory:
    """Hybrid forward simulation of the solution's controls, then the terminal leg.

    The draining part uses the shooting step unless ``dt`` is given.
    """
    tg = problem.target
    scen = single_target_scenario(tg)
    start = AgentState(tuple(solution.node_positions[0]), 0.0)
    R0 = [problem.arrival_uncertainty]
    parts = [sim.integrate_hybrid(scen, start, R0, _feasible(solution.draining_schedule()),
                                  dt or solution.step, "draining")]
    end = parts[0].end
    leg = sim.straight_leg(end.s, problem.departure)
    if leg:
        parts.append(sim.integrate_hybrid(scen, AgentState(tuple(end.s), end.t), end.R, leg,
                                          leg_dt, "terminal"))
    return sim.Trajectory.concat(parts)


def _feasible(schedule):
    out = []
    for d, u in schedule:
        n = math.hypot(*u)
        if n > 1.0:
            u = (u[0] / n, u[1] / n)
        out.append((d, u))
    return out


def relaxed_trace(solution: DrainingSolution, problem: DrainingProblem, leg_dt: float = 1e-3) -> sim.UncertaintyTrace:
    """Unclamped uncertainty along the solution, including the terminal leg."""
    tg = problem.target
    times = list(solution.node_times)
    vals = list(solution.node_uncertainty)
    leg = solution.terminal_leg_time
    if leg > 0:
        n = max(1, int(math.ceil(leg / leg_dt)))
        hs = np.full(n, leg / n)
        direction = (np.array(problem.departure) - solution.inner_exit_point) / leg
        pts = solution.inner_exit_point + np.outer(np.arange(n) * leg / n, direction) - tg.x
        rate = tg.A - tg.B + tg.B / tg.r**2 * np.sum(pts**2, axis=1)
        vals.extend(vals[-1] + np.cumsum(hs * rate))
        times.extend(times[-1] + np.cumsum(hs))
    return sim.UncertaintyTrace(np.array(times), np.array(vals))


def verify_solution(solution: DrainingSolution, problem: DrainingProblem) -> VerificationReport:
    """Check the structural properties every optimal draining trajectory has."""
    tg = problem.target
    x, d, r = tg.x, tg.delta, tg.r
    tol = draining_tol(problem)
    S = solution.node_positions - x
    R = solution.node_uncertainty
    N = solution.nodes
    h = solution.step
    checks = []

    rep = replay(solution, problem)
    n_drain = N + 1
    R_true = rep.R[:n_drain, 0]

    # (a) unique inner-circle crossing at which the uncertainty is drained
    dist = np.linalg.norm(S, axis=1)
    on_circle = abs(dist[-1] - d) <= 1e-6
    drained = R[-1] <= tol
    early = 0
    sgn = np.sign(dist[:-1] - d)
    for j in range(N - 1):
        crosses = sgn[j] != sgn[j + 1] or sgn[j + 1] == 0
        if crosses and R_true[j + 1] <= tol and dist[j + 1] >= d - 1e-9 and dist[j] < dist[j + 1]:
            early += 1
    checks.append(Diagnostic(
        "unique_exit", bool(on_circle and drained and early == 0),
        f"|s0-x|-delta={dist[-1] - d:.2e}, R(t0)={R[-1]:.3e}, earlier drained exits={early}"))

    # (b) terminal straight leg does not re-enter the inner disk
    a = solution.inner_exit_point - x
    b = np.array(problem.departure) - x
    seg = b - a
    L2 = seg @ seg
    if L2 > 0:
        tau = np.clip(-(a @ seg) / L2, 0.0, 1.0)
        closest = float(np.linalg.norm(a + tau * seg))
    else:
        closest = float(np.linalg.norm(a))
    checks.append(Diagnostic("no_reentry", closest >= d - 1e-6,
                             f"closest approach {closest:.6f} vs delta {d:.6f}"))

    # (c) a trailing nonpositive stretch longer than 2h forces a straight path
    first = N
    while first > 0 and R[first - 1] <= 0:
        first -= 1
    span = (N - first) * h if R[N] <= 0 else 0.0
    if span > 2 * h:
        seg_pts = S[first:]
        chord = seg_pts[-1] - seg_pts[0]
        cn = np.linalg.norm(chord)
        normal = np.array([-chord[1], chord[0]]) / cn
        dev = float(np.max(np.abs((seg_pts - seg_pts[0]) @ normal)))
        checks.append(Diagnostic("straight_when_idle", dev <= 1e-4,
                                 f"nonpositive span {span:.3f}, max deviation {dev:.2e}"))
    else:
        checks.append(Diagnostic("straight_when_idle", True, "no nonpositive stretch"))

    # (d) hybrid replay drains and arrives
    miss = float(np.linalg.norm(rep.s[-1] - np.array(problem.departure)))
    minR = float(np.min(rep.R[:, 0]))
    checks.append(Diagnostic("replay", bool(minR <= tol and miss <= 1e-3 * r),
                             f"min true R={minR:.3e}, endpoint miss={miss:.2e}"))
    return VerificationReport(checks, rep)


def random_problem(rng: np.random.Generator, nodes: int = 20, departure: Optional[str] = None) -> DrainingProblem:
    """Random draining problem for tests and benchmarks.

    ``departure`` selects the circle of the departure point: ``"inner"``,
    ``"sensing"`` or ``"between"``; by default one is drawn at random.
    """
    A = rng.uniform(0.5, 2.0)
    B = rng.uniform(2.0 * A, 30.0)
    r = rng.uniform(1.0, 5.0)
    tg = TargetSpec(1, tuple(rng.uniform(-10.0, 10.0, 2)), A, B, r)
    phi, psi = rng.uniform(0.0, 2 * math.pi, 2)
    kind = departure or ("inner", "sensing", "between")[int(rng.integers(3))]
    radius = {"inner": tg.delta, "sensing": r}.get(kind)
    if radius is None:
        radius = rng.uniform(tg.delta, r)
    R = rng.uniform(0.0, 2.0 * max(greedy_threshold(tg), 1.0))
    return DrainingProblem(tg, tuple(circle_point(tg.x, r, phi)), tuple(circle_point(tg.x, radius, psi)), R, nodes)
