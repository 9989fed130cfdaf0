"""Interior-point NLP solver returning primal solutions and Lagrange multipliers.

Problems have the form::

    min f(x)  s.t.  c(x) = 0,  g(x) <= 0

and are solved by a primal-dual interior-point method with slacks
(``g(x) + s = 0, s >= 0``), exact or finite-difference Hessians and a
filter line search with second-order corrections.  Small KKT systems use a
symmetric indefinite factorization with inertia correction; large sparse
ones use a sparse LU with a curvature test along the computed step.

Multipliers follow the Lagrangian ``L = f + lam^T c + mu^T g`` with
``mu >= 0``.  The sensitivity of the optimal value to a right-hand side
``c(x) = p`` is therefore ``-lam``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

Array = np.ndarray


@dataclass
class NlpProblem:
    """Callables describing a smooth NLP.

    Any derivative left as ``None`` is approximated by central differences.
    ``hess_lag(x, lam, mu)`` returns the Hessian of the Lagrangian.
    """

    n: int
    objective: Callable[[Array], float]
    gradient: Optional[Callable[[Array], Array]] = None
    eq: Optional[Callable[[Array], Array]] = None
    eq_jac: Optional[Callable[[Array], Array]] = None
    ineq: Optional[Callable[[Array], Array]] = None
    ineq_jac: Optional[Callable[[Array], Array]] = None
    hess_lag: Optional[Callable[[Array, Array, Array], Array]] = None

    def f(self, x):
        return float(self.objective(x))

    def grad(self, x):
        if self.gradient is not None:
            return np.asarray(self.gradient(x), dtype=float)
        return fd_jacobian(lambda y: np.atleast_1d(self.objective(y)), x)[0]

    def c(self, x):
        return np.zeros(0) if self.eq is None else np.asarray(self.eq(x), dtype=float)

    def Jc(self, x):
        return _dense(self.Jc_raw(x))

    def Jc_raw(self, x):
        """Equality Jacobian, possibly as a scipy sparse matrix."""
        if self.eq is None:
            return np.zeros((0, self.n))
        if self.eq_jac is not None:
            return _matrix(self.eq_jac(x), self.n)
        return fd_jacobian(self.c, x)

    def g(self, x):
        return np.zeros(0) if self.ineq is None else np.asarray(self.ineq(x), dtype=float)

    def Jg(self, x):
        return _dense(self.Jg_raw(x))

    def Jg_raw(self, x):
        if self.ineq is None:
            return np.zeros((0, self.n))
        if self.ineq_jac is not None:
            return _matrix(self.ineq_jac(x), self.n)
        return fd_jacobian(self.g, x)

    def lagrangian_grad(self, x, lam, mu):
        return self.grad(x) + self.Jc_raw(x).T @ lam + self.Jg_raw(x).T @ mu

    def hessian(self, x, lam, mu):
        return _dense(self.hessian_raw(x, lam, mu))

    def hessian_raw(self, x, lam, mu):
        if self.hess_lag is not None:
            return _matrix(self.hess_lag(x, lam, mu), self.n)
        H = fd_jacobian(lambda y: self.lagrangian_grad(y, lam, mu), x, step=1e-5)
        return 0.5 * (H + H.T)


def _matrix(M, n: int):
    if sp.issparse(M):
        return sp.csr_matrix(M, dtype=float)
    return np.asarray(M, dtype=float).reshape(-1, n)


def _dense(M) -> Array:
    return M.toarray() if sp.issparse(M) else M


def fd_jacobian(fun: Callable[[Array], Array], x: Array, step: float = 1e-6) -> Array:
    """Central-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fun(x))
    J = np.empty((f0.size, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * h)
    return J


@dataclass(frozen=True)
class NlpOptions:
    tol: float = 1e-6
    constr_tol: float = 1e-8
    max_iter: int = 500
    mu_init: float = 0.1
    slack_push: float = 1e-2
    verbose: bool = False


@dataclass(frozen=True)
class SolverReport:
    status: str  # "converged" | "max-iter" | "infeasible" | "line-search-failure"
    iterations: int
    kkt_residual: float
    constraint_violation: float
    stationarity: float = math.nan
    complementarity: float = math.nan

    @property
    def converged(self) -> bool:
        return self.status == "converged"


class NlpResult(NamedTuple):
    x: Array
    lam: Array
    mu: Array
    report: SolverReport


def kkt_measures(problem: NlpProblem, x, lam, mu) -> tuple[float, float, float]:
    """(stationarity, primal infeasibility, complementarity), all in inf-norm."""
    stat = np.max(np.abs(problem.lagrangian_grad(x, lam, mu)), initial=0.0)
    c = problem.c(x)
    g = problem.g(x)
    feas = max(np.max(np.abs(c), initial=0.0), np.max(g, initial=0.0))
    comp = np.max(np.abs(mu * g), initial=0.0)
    return float(stat), float(max(feas, 0.0)), float(comp)


class _Factor:
    """LDL^T factorization of a symmetric matrix with its inertia."""

    def __init__(self, K: Array):
        lu, d, perm = sla.ldl(K, lower=True, hermitian=True, overwrite_a=False, check_finite=False)
        self.L = lu[perm]
        self.perm = perm
        n = K.shape[0]
        # D is block diagonal with 1x1 and 2x2 blocks, in factorization order
        diag = np.diag(d).copy()
        sub = np.diag(d, -1).copy() if n > 1 else np.zeros(0)
        first = np.zeros(n, dtype=bool)  # first row of a 2x2 block
        first[:-1] = sub != 0.0
        second = np.zeros(n, dtype=bool)
        second[1:] = first[:-1]
        single = ~(first | second)
        a, c = diag[first], diag[second]
        b = sub[first[:-1]] if n > 1 else np.zeros(0)
        # eigenvalues of [[a, b], [b, c]]
        mean = 0.5 * (a + c)
        rad = np.sqrt(0.25 * (a - c) ** 2 + b**2)
        ev = np.concatenate([diag[single], mean + rad, mean - rad])
        scale = 1e-14 * max(1.0, float(np.max(np.abs(ev), initial=0.0)))
        self.inertia = (int(np.sum(ev > scale)), int(np.sum(ev < -scale)),
                        int(np.sum(np.abs(ev) <= scale)))
        self._single = single
        self._first = np.nonzero(first)[0]
        self._diag = diag
        self._a, self._b, self._c = a, b, c
        self._det = a * c - b * b

    def solve(self, b: Array) -> Array:
        w = sla.solve_triangular(self.L, b[self.perm], lower=True, unit_diagonal=True, check_finite=False)
        v = np.empty_like(w)
        v[self._single] = w[self._single] / self._diag[self._single]
        i = self._first
        w1, w2 = w[i], w[i + 1]
        v[i] = (self._c * w1 - self._b * w2) / self._det
        v[i + 1] = (self._a * w2 - self._b * w1) / self._det
        y = sla.solve_triangular(self.L.T, v, lower=False, unit_diagonal=True, check_finite=False)
        x = np.empty_like(y)
        x[self.perm] = y
        return x


SPARSE_THRESHOLD = 600


class _SparseFactor:
    """Sparse LU of the primal-dual matrix; inertia is not available."""

    inertia = None

    def __init__(self, K):
        self._lu = spla.splu(sp.csc_matrix(K))

    def solve(self, b: Array) -> Array:
        return self._lu.solve(b)


def _sparse_kkt_factor(W, Je, delta_w: float) -> _SparseFactor:
    """``W`` and ``Je`` are scipy sparse matrices."""
    n, m = W.shape[0], Je.shape[0]
    Wr = W + delta_w * sp.identity(n, format="csr") if delta_w else W
    for delta_c in (0.0, 1e-8, 1e-6):
        K = sp.bmat([[Wr, Je.T], [Je, -delta_c * sp.identity(m) if delta_c else None]], format="csc")
        try:
            return _SparseFactor(K)
        except RuntimeError:
            continue
    raise np.linalg.LinAlgError("singular KKT matrix")


def _kkt_factor(W: Array, Je: Array, state: dict) -> tuple[_Factor, float]:
    """Factor the primal-dual matrix, regularizing until its inertia is (n, m, 0)."""
    n, m = W.shape[0], Je.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = W
    K[n:, :n] = Je
    K[:n, n:] = Je.T
    delta_c = 0.0
    fac = _Factor(K)
    if fac.inertia == (n, m, 0):
        return fac, 0.0
    if fac.inertia[2] > 0:
        delta_c = 1e-8
    last = state.get("delta_w", 0.0)
    delta_w = 1e-4 if last == 0.0 else max(1e-20, last / 3.0)
    while True:
        Kr = K.copy()
        Kr[np.arange(n), np.arange(n)] += delta_w
        if delta_c:
            Kr[np.arange(n, n + m), np.arange(n, n + m)] -= delta_c
        fac = _Factor(Kr)
        if fac.inertia == (n, m, 0):
            state["delta_w"] = delta_w
            return fac, delta_w
        delta_w *= 100.0 if last == 0.0 else 8.0
        if delta_w > 1e40:
            raise np.linalg.LinAlgError("cannot correct KKT inertia")


def solve_nlp(
    problem: NlpProblem,
    x0,
    options: NlpOptions | None = None,
    lam0=None,
    mu0=None,
) -> NlpResult:
    """Solve ``problem`` from ``x0``; optional multiplier guesses warm start the duals."""
    opt = options or NlpOptions()
    x = np.array(x0, dtype=float)
    if x.shape != (problem.n,):
        raise ValueError(f"initial point has shape {x.shape}, expected ({problem.n},)")

    c = problem.c(x)
    g = problem.g(x)
    me, mi = c.size, g.size
    barrier = opt.mu_init
    s = np.maximum(-g, opt.slack_push)
    if mu0 is not None and len(mu0) == mi:
        z = np.maximum(np.asarray(mu0, dtype=float), barrier / s)
    else:
        z = barrier / s
    fgrad = problem.grad(x)
    Je = problem.Jc_raw(x)
    Jg = problem.Jg_raw(x)
    if lam0 is not None and len(lam0) == me:
        lam = np.array(lam0, dtype=float)
    elif me:
        lam = np.linalg.lstsq(_dense(Je).T, -(fgrad + Jg.T @ z), rcond=None)[0]
        if not np.all(np.isfinite(lam)) or np.max(np.abs(lam)) > 1e3:
            lam = np.zeros(me)
    else:
        lam = np.zeros(0)

    state: dict = {}
    f = problem.f(x)
    status = "max-iter"
    ls_failures = 0
    it = 0
    tol_bar = min(opt.tol, opt.constr_tol)

    def infeasibility(cv, gv, sv):
        return np.sum(np.abs(cv)) + np.sum(np.abs(gv + sv))

    # filter line search: a trial point is acceptable if it improves either
    # the constraint violation or the barrier objective over every filter entry
    theta0 = infeasibility(c, g, s)
    theta_max = 10.0 * max(1.0, theta0)
    theta_min = 1e-4 * max(1.0, theta0)
    filt: list[tuple[float, float]] = []

    for it in range(opt.max_iter + 1):
        stat_vec = fgrad + Je.T @ lam + Jg.T @ z
        stat = np.max(np.abs(stat_vec), initial=0.0)
        feas = max(np.max(np.abs(c), initial=0.0), np.max(g, initial=0.0))
        comp = np.max(np.abs(z * g), initial=0.0)
        if stat <= opt.tol and feas <= opt.constr_tol and comp <= opt.tol:
            status = "converged"
            break
        if it == opt.max_iter:
            break

        # barrier parameter update (monotone, Fiacco-McCormick)
        while True:
            E_mu = max(stat, np.max(np.abs(c), initial=0.0), np.max(np.abs(g + s), initial=0.0),
                       np.max(np.abs(s * z - barrier), initial=0.0))
            if E_mu > 10.0 * barrier or barrier <= tol_bar / 10.0:
                break
            barrier = max(tol_bar / 10.0, min(0.2 * barrier, barrier**1.5))
            filt = []

        r_d = stat_vec
        r_i = g + s
        r_c = s * z - barrier
        sigma = z / s
        H = problem.hessian_raw(x, lam, z)

        def direction(ri, cv):
            rhs = np.concatenate([-(r_d + Jg.T @ ((z * ri - r_c) / s)), -cv])
            sol = fac.solve(rhs)
            dx_, dl_ = sol[:problem.n], sol[problem.n:]
            ds_ = -ri - Jg @ dx_
            return dx_, dl_, ds_

        try:
            if problem.n + me <= SPARSE_THRESHOLD:
                Jgd = _dense(Jg)
                W = _dense(H) + (Jgd.T * sigma) @ Jgd
                fac, delta_w = _kkt_factor(W, _dense(Je), state)
                dx, dlam, ds = direction(r_i, c)
            else:
                # inertia-free regularization: demand positive curvature along the step
                Jgs = sp.csr_matrix(Jg)
                W = sp.csr_matrix(H) + Jgs.T @ sp.diags(sigma) @ Jgs
                Jes = sp.csr_matrix(Je)
                delta_w = 0.0
                last = state.get("delta_w", 0.0)
                while True:
                    fac = _sparse_kkt_factor(W, Jes, delta_w)
                    dx, dlam, ds = direction(r_i, c)
                    dd = dx @ dx
                    if dx @ W @ dx + delta_w * dd >= 1e-10 * dd:
                        break
                    delta_w = (1e-4 if last == 0.0 else max(1e-20, last / 3.0)) if delta_w == 0.0 \
                        else delta_w * (100.0 if last == 0.0 else 8.0)
                    if delta_w > 1e40:
                        raise np.linalg.LinAlgError("cannot obtain positive curvature")
                state["delta_w"] = delta_w
        except np.linalg.LinAlgError:
            status = "line-search-failure"
            break
        dz = (-r_c - z * ds) / s

        tau = max(0.99, 1.0 - barrier)
        alpha_max = _max_step(s, ds, tau)
        alpha_z = _max_step(z, dz, tau)

        theta = infeasibility(c, g, s)
        phi = f - barrier * np.sum(np.log(s))
        grad_phi = fgrad @ dx - barrier * np.sum(ds / s)

        def acceptable(ft_, ct_, gt_, st_, a):
            """Return (accepted, f_type) for a trial point at step ``a``."""
            if np.any(st_ <= 0):
                return False, False
            th_t = infeasibility(ct_, gt_, st_)
            ph_t = ft_ - barrier * np.sum(np.log(st_))
            if not (np.isfinite(th_t) and np.isfinite(ph_t)) or th_t > theta_max:
                return False, False
            if any(th_t >= tf and ph_t >= pf for tf, pf in filt):
                return False, False
            switching = grad_phi < 0 and a * (-grad_phi) ** 2.3 > theta**1.1
            if theta <= theta_min and switching:
                return bool(ph_t <= phi + 1e-4 * a * grad_phi), True
            return bool(th_t <= (1 - 1e-5) * theta or ph_t <= phi - 1e-8 * theta), False

        alpha = alpha_max
        accepted = f_type = False
        for trial in range(40):
            xt = x + alpha * dx
            st = s + alpha * ds
            ft, ct, gt = problem.f(xt), problem.c(xt), problem.g(xt)
            accepted, f_type = acceptable(ft, ct, gt, st, alpha)
            if accepted:
                break
            if trial == 0 and np.all(st > 0) and infeasibility(ct, gt, st) >= theta:
                # second-order corrections against the Maratos effect
                c_soc, ri_soc = c.copy(), r_i.copy()
                cs, gs, ss = ct, gt, st
                th_old = theta
                for _ in range(4):
                    c_soc = alpha * c_soc + cs
                    ri_soc = alpha * ri_soc + (gs + ss)
                    dxc, _, dsc = direction(ri_soc, c_soc)
                    a_soc = _max_step(s, dsc, tau)
                    xs, ss = x + a_soc * dxc, s + a_soc * dsc
                    fs, cs, gs = problem.f(xs), problem.c(xs), problem.g(xs)
                    ok, ftp = acceptable(fs, cs, gs, ss, alpha)
                    if ok:
                        xt, st, ft, ct, gt = xs, ss, fs, cs, gs
                        accepted, f_type = True, ftp
                        break
                    th_new = infeasibility(cs, gs, ss)
                    if th_new > 0.99 * th_old:
                        break
                    th_old = th_new
                if accepted:
                    break
            alpha *= 0.5
            if alpha < 1e-12:
                break
        if not accepted:
            ls_failures += 1
            if ls_failures >= 5:
                status = "line-search-failure"
                break
            # take a tiny step anyway, strengthen regularization and forget the filter
            state["delta_w"] = max(state.get("delta_w", 0.0), 1e-4) * 10
            filt = []
            alpha = min(alpha_max, 1e-3)
            xt = x + alpha * dx
            st = s + alpha * ds
            ft, ct, gt = problem.f(xt), problem.c(xt), problem.g(xt)
        else:
            ls_failures = 0
            if not f_type:
                filt.append(((1 - 1e-5) * theta, phi - 1e-8 * theta))

        x, s, f, c, g = xt, st, ft, ct, gt
        lam = lam + alpha * dlam
        z = z + alpha_z * dz
        z = np.clip(z, barrier / (1e10 * s), 1e10 * barrier / s)
        fgrad = problem.grad(x)
        Je = problem.Jc_raw(x)
        Jg = problem.Jg_raw(x)
        if opt.verbose:
            print(f"{it:4d} f={f: .8e} stat={stat:.2e} feas={feas:.2e} comp={comp:.2e} "
                  f"mu={barrier:.1e} a={alpha:.2e} amax={alpha_max:.2e} az={alpha_z:.2e} dw={delta_w:.1e}")

    stat, feas, comp = kkt_measures(problem, x, lam, z)
    report = SolverReport(status, it, max(stat, comp), feas, stat, comp)
    return NlpResult(x, lam, z, report)


def _max_step(v: Array, dv: Array, tau: float) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-tau * v[neg] / dv[neg])))


def fd_sensitivity(
    problem_builder: Callable[[float], NlpProblem],
    p: float,
    eta: float = 1e-4,
    x0=None,
    options: NlpOptions | None = None,
    lam0=None,
    mu0=None,
) -> float:
    """Central difference of the optimal value with respect to a scalar parameter.

    Both solves start from ``x0`` (typically the solution at ``p``).
    Raises ``RuntimeError`` if either solve fails.
    """
    values = []
    for q in (p + eta, p - eta):
        prob = problem_builder(q)
        start = np.zeros(prob.n) if x0 is None else x0
        res = solve_nlp(prob, start, options, lam0=lam0, mu0=mu0)
        if not res.report.converged:
            raise RuntimeError(f"solve at p={q} failed: {res.report}")
        values.append(prob.f(res.x))
    return (values[0] - values[1]) / (2 * eta)
