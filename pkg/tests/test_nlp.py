import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from pmcycle.nlp import (
    SPARSE_THRESHOLD,
    NlpOptions,
    NlpProblem,
    fd_jacobian,
    fd_sensitivity,
    kkt_measures,
    solve_nlp,
)


def qp_problem(H, g, Ae=None, be=None, Ai=None, bi=None):
    """min 0.5 x'Hx + g'x  s.t.  Ae x = be,  Ai x <= bi."""
    n = len(g)
    return NlpProblem(
        n,
        objective=lambda x: 0.5 * x @ H @ x + g @ x,
        gradient=lambda x: H @ x + g,
        eq=None if Ae is None else (lambda x: Ae @ x - be),
        eq_jac=None if Ae is None else (lambda x: Ae),
        ineq=None if Ai is None else (lambda x: Ai @ x - bi),
        ineq_jac=None if Ai is None else (lambda x: Ai),
        hess_lag=lambda x, lam, mu: H,
    )


def test_equality_qp_solution_and_multipliers():
    H = np.diag([2.0, 4.0])
    g = np.array([-2.0, -8.0])
    Ae = np.array([[1.0, 1.0]])
    res = solve_nlp(qp_problem(H, g, Ae, np.array([1.0])), np.zeros(2))
    assert res.report.converged
    # KKT: Hx + g + Ae' lam = 0, x1 + x2 = 1
    K = np.block([[H, Ae.T], [Ae, np.zeros((1, 1))]])
    sol = np.linalg.solve(K, np.concatenate([-g, [1.0]]))
    np.testing.assert_allclose(res.x, sol[:2], atol=1e-7)
    np.testing.assert_allclose(res.lam, sol[2:], atol=1e-7)


def test_value_sensitivity_is_minus_lambda():
    H = np.diag([2.0, 4.0])
    g = np.array([-2.0, -8.0])
    Ae = np.array([[1.0, 1.0]])

    def build(p):
        return qp_problem(H, g, Ae, np.array([p]))

    res = solve_nlp(build(1.0), np.zeros(2))
    fd = fd_sensitivity(build, 1.0, x0=res.x)
    assert fd == pytest.approx(-res.lam[0], rel=1e-6)


def test_active_inequality_multiplier():
    # min (x-2)^2 s.t. x <= 1: active, mu = 2
    prob = qp_problem(np.array([[2.0]]), np.array([-4.0]), Ai=np.array([[1.0]]), bi=np.array([1.0]))
    res = solve_nlp(prob, np.array([0.0]))
    assert res.report.converged
    assert res.x[0] == pytest.approx(1.0, abs=1e-6)
    assert res.mu[0] == pytest.approx(2.0, rel=1e-5)


def test_inactive_inequality_has_zero_multiplier():
    prob = qp_problem(np.array([[2.0]]), np.array([-4.0]), Ai=np.array([[1.0]]), bi=np.array([5.0]))
    res = solve_nlp(prob, np.array([0.0]))
    assert res.x[0] == pytest.approx(2.0, abs=1e-6)
    assert abs(res.mu[0]) < 1e-5


def test_hs071():
    """Classic four-variable test problem with known optimum 17.0140173."""
    prob = NlpProblem(
        4,
        objective=lambda x: x[0] * x[3] * (x[0] + x[1] + x[2]) + x[2],
        eq=lambda x: np.array([x @ x - 40.0]),
        ineq=lambda x: np.concatenate([[25.0 - np.prod(x)], 1.0 - x, x - 5.0]),
    )
    res = solve_nlp(prob, np.array([1.0, 5.0, 5.0, 1.0]))
    assert res.report.converged
    assert prob.f(res.x) == pytest.approx(17.0140173, rel=1e-6)
    np.testing.assert_allclose(res.x, [1.0, 4.74299963, 3.82114998, 1.37940829], atol=1e-5)
    assert np.all(res.mu >= -1e-9)


def test_nonconvex_problem_needs_curvature_correction():
    # min -x^2 - y^2 on the unit box: the solver must leave the saddle at the origin
    prob = NlpProblem(
        2,
        objective=lambda x: -(x @ x) + 0.1 * x[0] + 0.05 * x[1],
        ineq=lambda x: np.concatenate([x - 1.0, -1.0 - x]),
    )
    res = solve_nlp(prob, np.zeros(2))
    assert res.report.converged
    assert np.all(np.abs(np.abs(res.x) - 1.0) < 1e-5)


def test_rosenbrock_on_disk():
    prob = NlpProblem(
        2,
        objective=lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2,
        ineq=lambda x: np.array([x @ x - 1.5]),
    )
    res = solve_nlp(prob, np.array([-1.0, 0.5]))
    assert res.report.converged
    # unconstrained minimizer (1, 1) lies outside the disk of radius sqrt(1.5)
    assert res.x @ res.x == pytest.approx(1.5, abs=1e-6)


def test_shape_mismatch_raises():
    prob = qp_problem(np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        solve_nlp(prob, np.zeros(3))


def test_kkt_measures_at_solution():
    prob = qp_problem(np.eye(2), np.array([-1.0, -1.0]), Ae=np.array([[1.0, -1.0]]), be=np.array([0.5]))
    res = solve_nlp(prob, np.zeros(2))
    stat, feas, comp = kkt_measures(prob, res.x, res.lam, res.mu)
    assert stat < 1e-6 and feas < 1e-8 and comp < 1e-6


def test_max_iter_reported():
    prob = NlpProblem(
        2,
        objective=lambda x: (1 - x[0]) ** 2 + 100 * (x[1] - x[0] ** 2) ** 2,
        ineq=lambda x: np.array([x @ x - 1.5]),
    )
    res = solve_nlp(prob, np.array([-1.0, 0.5]), NlpOptions(max_iter=2))
    assert not res.report.converged
    assert res.report.status == "max-iter"


def test_fd_jacobian_matches_analytic():
    f = lambda x: np.array([np.sin(x[0]) * x[1], x[0] ** 2])  # noqa: E731
    x = np.array([0.3, -1.2])
    J = np.array([[np.cos(0.3) * -1.2, np.sin(0.3)], [0.6, 0.0]])
    np.testing.assert_allclose(fd_jacobian(f, x), J, atol=1e-8)


def test_sparse_callbacks_large_problem():
    """A separable problem big enough for the sparse linear algebra path."""
    n = SPARSE_THRESHOLD
    rng = np.random.default_rng(1)
    d = rng.uniform(1.0, 3.0, n)
    g = rng.normal(size=n)
    m = n // 2
    rows = np.repeat(np.arange(m), 2)
    cols = np.arange(2 * m)
    Ae = sp.csr_matrix((np.ones(2 * m), (rows, cols)), shape=(m, n))
    be = rng.normal(size=m)
    prob = NlpProblem(
        n,
        objective=lambda x: 0.5 * np.sum(d * x * x) + g @ x,
        gradient=lambda x: d * x + g,
        eq=lambda x: Ae @ x - be,
        eq_jac=lambda x: Ae,
        ineq=lambda x: x - 2.0,
        ineq_jac=lambda x: sp.identity(n, format="csr"),
        hess_lag=lambda x, lam, mu: sp.diags(d),
    )
    res = solve_nlp(prob, np.zeros(n))
    assert res.report.converged
    # dense reference of the equality-constrained QP
    x_ref = np.empty(n)
    for i in range(m):
        a, b = 2 * i, 2 * i + 1
        # min 0.5 da xa^2 + ga xa + 0.5 db xb^2 + gb xb  s.t. xa + xb = be_i
        lam = -(be[i] + g[a] / d[a] + g[b] / d[b]) / (1 / d[a] + 1 / d[b])
        x_ref[a] = -(g[a] + lam) / d[a]
        x_ref[b] = -(g[b] + lam) / d[b]
    x_ref[2 * m:] = -g[2 * m:] / d[2 * m:]
    mask = x_ref < 2.0 - 1e-3
    np.testing.assert_allclose(res.x[mask], x_ref[mask], atol=1e-5)
    assert np.all(res.x <= 2.0 + 1e-8)
    assert sp.issparse(prob.Jc_raw(res.x)) and not sp.issparse(prob.Jc(res.x))


@settings(max_examples=40)
@given(st.integers(2, 8), st.integers(0, 3), st.integers(0, 2**31 - 1))
def test_random_convex_qp_matches_kkt_solve(n, m, seed):
    m = min(m, n - 1)
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    H = M @ M.T + np.eye(n)
    g = rng.normal(size=n)
    Ae = rng.normal(size=(m, n)) if m else None
    be = rng.normal(size=m) if m else None
    res = solve_nlp(qp_problem(H, g, Ae, be), rng.normal(size=n))
    assert res.report.converged
    if m:
        K = np.block([[H, Ae.T], [Ae, np.zeros((m, m))]])
        sol = np.linalg.solve(K, np.concatenate([-g, be]))
        np.testing.assert_allclose(res.x, sol[:n], atol=1e-6 * max(1, np.abs(sol).max()))
        np.testing.assert_allclose(res.lam, sol[n:], atol=1e-5 * max(1, np.abs(sol).max()))
    else:
        np.testing.assert_allclose(res.x, np.linalg.solve(H, -g), atol=1e-6)


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(0.5, 2.0))
def test_box_projection_property(a, b, ub):
    """min |x - (a, b)|^2 s.t. x <= ub is the componentwise clip, with mu = 2 (c - ub)_+."""
    c = np.array([a, b])
    prob = qp_problem(2 * np.eye(2), -2 * c, Ai=np.eye(2), bi=np.full(2, ub))
    res = solve_nlp(prob, np.zeros(2))
    assert res.report.converged
    # without strict complementarity (minimizer on the bound) accuracy is only ~sqrt(tol)
    degenerate = np.abs(c - ub) < 0.05
    atol = np.where(degenerate, 2e-3, 1e-5)
    assert np.all(np.abs(res.x - np.minimum(c, ub)) <= atol)
    assert np.all(np.abs(res.mu - 2 * np.maximum(c - ub, 0.0)) <= 10 * atol)
