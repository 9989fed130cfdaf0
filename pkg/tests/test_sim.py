import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmcycle import sim
from pmcycle.model import AgentState, Scenario, TargetSpec


def single(target, R=0.0):
    return Scenario((target,), (target.id,), (R,))


def random_schedule(rng, a, b, pieces):
    """Feasible piecewise-constant controls from ``a`` to ``b`` through random waypoints."""
    pts = [np.asarray(a, float)] + [rng.uniform(-5, 5, 2) for _ in range(pieces - 1)] + [np.asarray(b, float)]
    out = []
    for p, q in zip(pts[:-1], pts[1:]):
        d = q - p
        L = float(np.linalg.norm(d))
        if L == 0:
            continue
        speed = rng.uniform(0.3, 1.0)
        out.append((L / speed, tuple(d / L * speed)))
    return out


def end_point(start, schedule):
    return np.asarray(start, float) + sum(d * np.asarray(u) for d, u in schedule)


def test_dwell_at_center_drains_linearly(ref_target):
    tr = sim.integrate_hybrid(single(ref_target), AgentState((0, 0)), [19.0], [(1.5, (0.0, 0.0))], 1e-3)
    i = np.searchsorted(tr.t, 0.5)
    assert tr.R[i, 0] == pytest.approx(19.0 - 19.0 * tr.t[i], abs=1e-9)
    assert tr.R[-1, 0] == 0.0  # clamped, stays at zero
    assert np.all(tr.R >= 0)


def test_far_from_target_grows_at_rate_A(ref_target):
    tr = sim.integrate_hybrid(single(ref_target), AgentState((10, 0)), [2.0], [(3.0, (0.0, 1.0))], 1e-2)
    assert tr.R[-1, 0] == pytest.approx(5.0)
    np.testing.assert_allclose(tr.s[-1], [10.0, 3.0])


def test_pieces_end_exactly_on_boundaries(ref_target):
    tr = sim.integrate_hybrid(single(ref_target), AgentState((5, 5), 2.0), [0.0],
                              [(0.0125, (1.0, 0.0)), (0.3333, (0.0, -1.0))], 1e-2)
    assert tr.t[0] == 2.0
    assert tr.t[-1] == pytest.approx(2.0 + 0.0125 + 0.3333, abs=1e-14)
    np.testing.assert_allclose(tr.s[-1], [5.0125, 5 - 0.3333], atol=1e-14)


@pytest.mark.parametrize(
    "R0, controls, dt",
    [
        ([1.0], [(1.0, (1.0, 0.5))], 1e-3),  # |u| > 1
        ([1.0], [(-1.0, (1.0, 0.0))], 1e-3),  # negative duration
        ([-1.0], [(1.0, (1.0, 0.0))], 1e-3),  # negative uncertainty
        ([1.0, 2.0], [(1.0, (1.0, 0.0))], 1e-3),  # wrong count
        ([1.0], [(1.0, (1.0, 0.0))], 0.0),  # bad step
    ],
)
def test_integrate_hybrid_validates_inputs(ref_target, R0, controls, dt):
    with pytest.raises(ValueError):
        sim.integrate_hybrid(single(ref_target), AgentState((0, 0)), R0, controls, dt)


def test_empty_schedule_gives_single_sample(ref_target):
    tr = sim.integrate_hybrid(single(ref_target), AgentState((1, 1), 3.0), [4.0], [], 1e-3)
    assert len(tr) == 1 and tr.end.t == 3.0 and tr.end.R[0] == 4.0


@given(st.lists(st.floats(-5, 5), min_size=1, max_size=60), st.floats(0, 10))
def test_clamped_accumulate_matches_loop(incs, R0):
    inc = np.array(incs)[:, None]
    out = sim.clamped_accumulate(np.array([R0]), inc)
    R = R0
    ref = [R]
    for v in incs:
        R = max(0.0, R + v)
        ref.append(R)
    np.testing.assert_allclose(out[:, 0], ref, atol=1e-9)
    assert np.all(out >= 0)


def test_trajectory_concat_and_indexing(ref_target):
    sc = single(ref_target)
    a = sim.integrate_hybrid(sc, AgentState((5, 0)), [1.0], [(1.0, (1.0, 0.0))], 0.25, "a")
    b = sim.integrate_hybrid(sc, AgentState(tuple(a.end.s), a.end.t), a.end.R, [(0.5, (0.0, 1.0))], 0.25, "b")
    tr = sim.Trajectory.concat([a, b])
    assert len(tr) == len(a) + len(b) - 1
    assert tr.phase[0] == "a" and tr.phase[-1] == "b"
    np.testing.assert_allclose(tr[len(a) - 1].u, [0.0, 1.0])  # control switches at the joint
    assert [s.t for s in tr] == list(tr.t)


def test_straight_leg():
    assert sim.straight_leg((0, 0), (0, 0)) == []
    (d, u), = sim.straight_leg((0, 0), (3, 4))
    assert d == 5.0 and u == pytest.approx((0.6, 0.8))


def test_simulate_cycle_bookkeeping(ref_target):
    other = TargetSpec(2, (10.0, 0.0), 1.0, 20.0, 3.0)
    sc = Scenario((ref_target, other), (1, 2), (5.0, 0.0))
    plan = sim.CyclePlan((0.0, 0.0), [
        sim.PhasePlan("draining", 0, [(1.0, (0.0, 0.0))]),
        sim.PhasePlan("switching", 0, sim.straight_leg((0, 0), (10, 0))),
        sim.PhasePlan("draining", 1, [(0.5, (0.0, 0.0))]),
        sim.PhasePlan("switching", 1, sim.straight_leg((10, 0), (0, 0))),
    ])
    rec, tr = sim.simulate_cycle(sc, plan, sc.initial_uncertainty, dt=1e-3)
    assert rec.arrival_uncertainty[0] == 5.0
    assert rec.departure_uncertainty[0] == 0.0
    np.testing.assert_allclose(rec.drain_times, [1.0, 0.5])
    np.testing.assert_allclose(rec.switch_times, [10.0, 10.0])
    assert rec.period == pytest.approx(21.5) and rec.wall_time == pytest.approx(21.5)
    assert {"draining_1", "switching_1", "draining_2", "switching_2"} == set(tr.phase)
    with pytest.raises(ValueError):
        sim.simulate_cycle(sc, sim.CyclePlan((0, 0), plan.phases[:2]), sc.initial_uncertainty)


def test_recovery_of_single_dip_trace():
    t = np.linspace(0, 4, 401)
    relaxed = 3.0 - 4.0 * t + t**2  # dips below zero between t=1 and t=3
    t0 = 2.0
    rec, flagged = sim.recover_true_uncertainty(sim.UncertaintyTrace(t, relaxed), t0)
    ref = sim.clamped_accumulate(np.array([3.0]), np.diff(relaxed)[:, None])[:, 0]
    np.testing.assert_allclose(rec.values, ref, atol=1e-9)
    assert not flagged
    with pytest.raises(ValueError):
        sim.recover_true_uncertainty(sim.UncertaintyTrace(t, relaxed), 5.0)


def test_recovery_flags_second_dip():
    t = np.linspace(0, 6, 601)
    relaxed = np.cos(2 * t) * 2 + 0.5 - 0.5 * t  # the second dip is deeper than the first
    t0 = t[np.argmin(relaxed[t < 3])]
    _, flagged = sim.recover_true_uncertainty(sim.UncertaintyTrace(t, relaxed), t0)
    assert flagged


@settings(max_examples=50)
@given(st.floats(0.1, 10), st.floats(0.2, 3), st.floats(0.05, 0.95))
def test_recovery_matches_clamped_integration(R0, depth, frac):
    """Relaxed traces that decrease to a minimum and then increase."""
    t = np.linspace(0.0, 2.0, 201)
    tmin = 2.0 * frac
    relaxed = R0 - (R0 + depth) * np.minimum(t / tmin, 1.0) + np.maximum(t - tmin, 0.0)
    t0 = t[np.argmin(relaxed)]
    rec, flagged = sim.recover_true_uncertainty(sim.UncertaintyTrace(t, relaxed), t0)
    ref = sim.clamped_accumulate(np.array([R0]), np.diff(relaxed)[:, None])[:, 0]
    assert not flagged
    np.testing.assert_allclose(rec.values, ref, atol=1e-9 * max(1, R0))


def test_uncertainty_trace_validation():
    with pytest.raises(ValueError):
        sim.UncertaintyTrace(np.array([0.0, 0.0]), np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        sim.UncertaintyTrace(np.array([0.0, 1.0]), np.array([1.0]))


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_homotopy_of_feasible_controls_is_feasible(seed, sigma):
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
    s1 = random_schedule(rng, a, b, int(rng.integers(1, 5)))
    s2 = random_schedule(rng, a, b, int(rng.integers(1, 5)))
    blend = sim.blend_controls(s1, s2, sigma)
    T1, T2 = sim.schedule_duration(s1), sim.schedule_duration(s2)
    assert sim.schedule_duration(blend) == pytest.approx((1 - sigma) * T1 + sigma * T2)
    assert all(math.hypot(*u) <= 1 + 1e-12 for _, u in blend)
    np.testing.assert_allclose(end_point(a, blend), b, atol=1e-9)


def test_blend_keeps_final_piece_under_roundoff():
    # warped break points can overshoot T_sigma by an ulp; the last piece must survive
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.uniform(-5, 5, 2), rng.uniform(-5, 5, 2)
        s1 = random_schedule(rng, a, b, int(rng.integers(1, 5)))
        s2 = random_schedule(rng, a, b, int(rng.integers(1, 5)))
        blend = sim.blend_controls(s1, s2, rng.uniform())
        np.testing.assert_allclose(end_point(a, blend), b, atol=1e-9)


def test_unweighted_blend_misses_endpoint():
    a, b = np.zeros(2), np.array([4.0, 0.0])
    s1 = [(4.0, (1.0, 0.0))]
    s2 = [(8.0, (0.5, 0.0))]
    good = sim.blend_controls(s1, s2, 0.5)
    bad = sim.blend_controls_unweighted(s1, s2, 0.5)
    np.testing.assert_allclose(end_point(a, good), b, atol=1e-12)
    assert np.linalg.norm(end_point(a, bad) - b) > 0.1


def test_reverse_schedule_returns_to_start():
    rng = np.random.default_rng(3)
    s = random_schedule(rng, (0, 0), (2, 3), 3)
    back = sim.reverse_schedule(s)
    np.testing.assert_allclose(end_point(end_point((0, 0), s), back), [0, 0], atol=1e-12)


def test_cycle_record_grad_norm():
    rec = sim.CycleRecord(np.zeros(1), np.zeros(1), np.zeros(1), 0.0, 0.0)
    assert math.isnan(rec.grad_norm)
    rec.gradient = np.array([0.5, -2.0])
    assert rec.grad_norm == 2.0
