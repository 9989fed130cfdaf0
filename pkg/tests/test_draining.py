import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmcycle import sim
from pmcycle.draining import (
    DrainingProblem,
    equality_rows,
    greedy_closed_form,
    greedy_solution,
    initial_guess,
    random_problem,
    relaxed_trace,
    replay,
    solve_draining,
    transcribe,
    verify_solution,
)
from pmcycle.model import TargetSpec, circle_point, circle_tangent, greedy_threshold
from pmcycle.nlp import NlpOptions

TIGHT = NlpOptions(tol=1e-10, constr_tol=1e-11)


def diametral(target, R=100.0, nodes=20):
    return DrainingProblem(target, (-target.r, 0.0), (target.r, 0.0), R, nodes)


def on_circles(target, phi, psi, R, radius=None, nodes=20):
    radius = target.delta if radius is None else radius
    return DrainingProblem(target, tuple(circle_point(target.x, target.r, phi)),
                           tuple(circle_point(target.x, radius, psi)), R, nodes)


def test_greedy_closed_form_reference_value(ref_target):
    T, sched = greedy_closed_form(diametral(ref_target))
    assert T == pytest.approx(7.36643, abs=1e-5)
    assert sum(d for d, _ in sched) == pytest.approx(T)
    assert all(math.hypot(*u) <= 1 + 1e-12 for _, u in sched)


def test_greedy_closed_form_preconditions(ref_target):
    with pytest.raises(ValueError):
        greedy_closed_form(diametral(ref_target, R=10.0))
    with pytest.raises(ValueError):
        greedy_closed_form(on_circles(ref_target, 0.0, 1.0, 100.0))


def test_diametral_solve_matches_closed_form(ref_target):
    sol = solve_draining(diametral(ref_target))
    assert sol.report.converged
    assert sol.total_time == pytest.approx(7.36643, rel=7e-3)
    assert not sol.pinned
    assert sol.lambda_R > 0


@pytest.mark.parametrize(
    "entrance, departure",
    [((2.0, 0.0), (-3.0, 0.0)), ((3.0, 0.0), (4.0, 0.0))],
)
def test_problem_rejects_bad_boundary_points(ref_target, entrance, departure):
    with pytest.raises(ValueError):
        DrainingProblem(ref_target, entrance, departure, 1.0)


def test_problem_rejects_bad_data(ref_target):
    with pytest.raises(ValueError):
        DrainingProblem(ref_target, (3.0, 0.0), (-3.0, 0.0), -1.0)
    with pytest.raises(ValueError):
        DrainingProblem(ref_target, (3.0, 0.0), (-3.0, 0.0), 1.0, nodes=1)


def test_pinned_only_on_inner_circle(ref_target):
    assert on_circles(ref_target, 0.0, 2.0, 5.0).pinned
    assert not on_circles(ref_target, 0.0, 2.0, 5.0, radius=3.0).pinned
    assert not on_circles(ref_target, 0.0, 2.0, 5.0, radius=2.95).pinned


def test_transcription_sizes(ref_target):
    p = on_circles(ref_target, 0.0, 2.0, 5.0, nodes=10)
    nlp = transcribe(p)
    z = initial_guess(p)
    assert z.shape == (nlp.n,)
    assert nlp.c(z).size == equality_rows(p)
    assert np.all(np.isfinite(nlp.g(z)))


def test_initial_guess_rollout_drains(ref_target):
    for R in (0.0, 10.0, 1e3, 1e4):
        p = on_circles(ref_target, 0.5, 2.5, R)
        nlp = transcribe(p)
        z = initial_guess(p)
        # the guess satisfies the draining inequality with margin
        assert nlp.g(z).max() <= 1.0


@pytest.mark.parametrize("R", [0.0, 1e-3, 30.0, 1e3, 1e4])
def test_extreme_arrival_uncertainty(ref_target, R):
    p = diametral(ref_target, R)
    sol = solve_draining(p)
    assert verify_solution(sol, p).passed


def test_zero_arrival_near_adjacent_angles(ref_target):
    p = on_circles(ref_target, 0.0, 0.05, 0.0)
    sol = solve_draining(p)
    rep = verify_solution(sol, p)
    assert rep.passed, rep.failed()
    # with nothing to drain the agent only dips into the inner disk
    assert sol.total_time < 2 * ref_target.r


def test_mesh_refinement_path(ref_target):
    sol = solve_draining(diametral(ref_target, nodes=200))
    assert sol.nodes == 200
    assert sol.total_time == pytest.approx(7.36643, rel=7e-4)


def test_warm_start_reproduces_solution(ref_target):
    p = on_circles(ref_target, 0.4, 2.9, 40.0)
    cold = solve_draining(p)
    p2 = on_circles(ref_target, 0.41, 2.89, 40.5)
    warm = solve_draining(p2, warm_start=cold)
    ref = solve_draining(p2)
    assert warm.total_time == pytest.approx(ref.total_time, rel=1e-6)


def test_replay_and_relaxed_trace_agree(ref_target):
    p = on_circles(ref_target, 1.0, 3.5, 60.0)
    sol = solve_draining(p)
    rep = replay(sol, p)
    assert rep.t[-1] == pytest.approx(sol.total_time, rel=1e-9)
    tr = relaxed_trace(sol, p)
    rec, flagged = sim.recover_true_uncertainty(tr, sol.inner_exit_time)
    assert not flagged
    np.testing.assert_allclose(rec(rep.t), rep.R[:, 0], atol=5e-3 * 60.0)


def test_greedy_solution_is_euler_consistent(ref_target):
    p = diametral(ref_target)
    g = greedy_solution(p)
    h = g.step
    S = g.node_positions - ref_target.x
    rate = ref_target.A - ref_target.B + ref_target.B / 9.0 * np.sum(S[:-1] ** 2, axis=1)
    np.testing.assert_allclose(np.diff(g.node_uncertainty), h * rate, atol=1e-12)
    assert g.total_time == pytest.approx(greedy_closed_form(p)[0])


def fd_time(problem_at, eta=1e-5):
    return (solve_draining(problem_at(eta), options=TIGHT).total_time
            - solve_draining(problem_at(-eta), options=TIGHT).total_time) / (2 * eta)


@pytest.mark.parametrize("radius", ["inner", "sensing"])
def test_duals_are_boundary_sensitivities(ref_target, radius):
    tg = ref_target
    rad = tg.delta if radius == "inner" else tg.r
    phi, psi, R = 0.3, 2.6, 90.0
    sol = solve_draining(on_circles(tg, phi, psi, R, rad), options=TIGHT)
    d_phi = fd_time(lambda e: on_circles(tg, phi + e, psi, R, rad))
    d_psi = fd_time(lambda e: on_circles(tg, phi, psi + e, R, rad))
    d_R = fd_time(lambda e: on_circles(tg, phi, psi, R + e, rad))
    assert float(sol.lambda_phi @ circle_tangent(tg.r, phi)) == pytest.approx(d_phi, rel=1e-3, abs=1e-6)
    assert float(sol.lambda_psi @ circle_tangent(rad, psi)) == pytest.approx(d_psi, rel=1e-3, abs=1e-6)
    assert sol.lambda_R == pytest.approx(d_R, rel=1e-3)


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_random_problems_solve_and_verify(seed):
    p = random_problem(np.random.default_rng(seed))
    sol = solve_draining(p)
    rep = verify_solution(sol, p)
    assert rep.passed, rep.failed()
    assert sol.node_uncertainty[-1] <= 1e-6 * max(1.0, p.arrival_uncertainty)
    assert np.all(np.linalg.norm(sol.node_controls, axis=1) <= 1 + 1e-8)


@settings(max_examples=15)
@given(st.integers(0, 2**31 - 1))
def test_time_is_monotone_in_arrival_uncertainty(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng)
    times = []
    warm = None
    for R in np.linspace(0.0, 1.5 * greedy_threshold(p.target), 6):
        q = DrainingProblem(p.target, p.entrance, p.departure, float(R), p.nodes)
        warm = solve_draining(q)
        times.append(warm.total_time)
    assert np.all(np.diff(times) >= -1e-6 * max(times))


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1), st.floats(10.0, 30.0), st.floats(1.0, 3.0))
def test_greedy_agreement_above_threshold(seed, ratio, excess):
    rng = np.random.default_rng(seed)
    A = rng.uniform(0.5, 2.0)
    tg = TargetSpec(1, (0.0, 0.0), A, ratio * A, rng.uniform(1.0, 5.0))
    phi, psi = rng.uniform(0, 2 * math.pi, 2)
    p = on_circles(tg, phi, psi, excess * greedy_threshold(tg), radius=tg.r)
    T, _ = greedy_closed_form(p)
    assert solve_draining(p).total_time == pytest.approx(T, rel=1e-2)
