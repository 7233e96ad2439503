"""Smooth constrained NLP solver: augmented Lagrangian + box-projected L-BFGS-B.

Used for both sides of the reduction loop: the policy minimization over
finite scenario sets and the worst-case maximizations over the uncertainty
box.  Only first derivatives are required; problems may supply analytic
gradients and vector-Jacobian products (adjoints), otherwise central finite
differences are used.

Maximization is handled by negating the objective, so ``solve`` on
``sense="max"`` returns exactly the minimizer of the negated problem with the
objective value negated back.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import lsq_linear
from scipy.optimize import minimize as _scipy_minimize

_BIG = 1e20


class NlpDiverged(RuntimeError):
    """Objective or constraint evaluation produced a non-finite value."""


@dataclass(frozen=True)
class SolverOptions:
    tol_feas: float = 1e-6
    tol_stat: float = 1e-6
    max_iter: int = 200
    fd_step: float = 1e-6
    multistart_count: int = 1
    rng_seed: int = 0
    mu0: float = 10.0
    mu_growth: float = 10.0
    inner_maxiter: int = 600
    lbfgs_maxcor: int = 20

    def __post_init__(self):
        if min(self.tol_feas, self.tol_stat, self.fd_step) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class NlpProblem:
    """min (or max) objective(x) s.t. inequality(x) <= 0, equality(x) = 0, box bounds.

    ``inequality_vjp(x, wts)`` should return J_g(x)^T wts; supplying it (or a
    dense Jacobian) avoids finite differences in the augmented-Lagrangian
    gradient.  All callables must be smooth on the box.
    """

    n_vars: int
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable] = None
    inequality: Optional[Callable] = None
    inequality_jac: Optional[Callable] = None
    inequality_vjp: Optional[Callable] = None
    equality: Optional[Callable] = None
    equality_jac: Optional[Callable] = None
    equality_vjp: Optional[Callable] = None
    var_lower: Optional[np.ndarray] = None
    var_upper: Optional[np.ndarray] = None
    sense: str = "min"

    def __post_init__(self):
        if self.sense not in ("min", "max"):
            raise ValueError("sense must be 'min' or 'max'")
        lo = np.full(self.n_vars, -np.inf) if self.var_lower is None else np.asarray(self.var_lower, float)
        hi = np.full(self.n_vars, np.inf) if self.var_upper is None else np.asarray(self.var_upper, float)
        if lo.shape != (self.n_vars,) or hi.shape != (self.n_vars,):
            raise ValueError("bound shape mismatch")
        if np.any(lo > hi):
            raise ValueError("var_lower must be <= var_upper")
        self.var_lower = lo
        self.var_upper = hi


@dataclass
class KktReport:
    stationarity: float
    feasibility: float
    complementarity: float
    ineq_violation: np.ndarray
    eq_violation: np.ndarray
    bound_violation: float
    multipliers_ineq: np.ndarray
    multipliers_eq: np.ndarray
    passed: bool


@dataclass
class NlpResult:
    x_star: np.ndarray
    objective_value: float
    status: str  # converged | max_iter | infeasible | diverged
    kkt: KktReport
    iterations: int
    multipliers_ineq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    multipliers_eq: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nfev: int = 0
    start_index: int = 0

    @property
    def success(self):
        return self.status == "converged"


def gradient(f: Callable, x: np.ndarray, opts: SolverOptions = SolverOptions()) -> np.ndarray:
    """Central finite-difference gradient with relative step opts.fd_step."""
    x = np.asarray(x, dtype=float)
    g = np.zeros(x.size)
    for i in range(x.size):
        h = opts.fd_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        fp, fm = f(xp), f(xm)
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NlpDiverged(f"non-finite probe at coordinate {i}")
        g[i] = (fp - fm) / (2.0 * h)
    return g


def _fd_jacobian(fun, x, m, step):
    J = np.zeros((m, x.size))
    for i in range(x.size):
        h = step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(fun(xp)) - np.asarray(fun(xm))) / (2.0 * h)
    return J


class _Evaluator:
    """Caches (f, g, h) per point and provides gradients/VJPs with FD fallback."""

    def __init__(self, problem: NlpProblem, opts: SolverOptions, negate: bool):
        self.p = problem
        self.opts = opts
        self.sign = -1.0 if negate else 1.0
        self.nfev = 0
        self.diverged_last = False
        self._cache_key = None
        self._cache_val = None
        self._jac_cache = {}

    def evals(self, x):
        key = x.tobytes()
        if key == self._cache_key:
            return self._cache_val
        self.nfev += 1
        try:
            f = self.sign * float(self.p.objective(x))
            g = np.asarray(self.p.inequality(x), float) if self.p.inequality else np.zeros(0)
            h = np.asarray(self.p.equality(x), float) if self.p.equality else np.zeros(0)
            ok = np.isfinite(f) and np.all(np.isfinite(g)) and np.all(np.isfinite(h))
        except (FloatingPointError, ArithmeticError, RuntimeError):
            f, g, h, ok = _BIG, np.zeros(0), np.zeros(0), False
        self.diverged_last = not ok
        if not ok:
            f = _BIG
            g = np.zeros_like(g) if g.size else g
            h = np.zeros_like(h) if h.size else h
        self._cache_key, self._cache_val = key, (f, g, h)
        return self._cache_val

    def obj_grad(self, x):
        if self.p.gradient is not None:
            return self.sign * np.asarray(self.p.gradient(x), float)
        return self.sign * gradient(lambda z: float(self.p.objective(z)), x, self.opts)

    def ineq_vjp(self, x, wts):
        if not wts.size or not np.any(wts):
            return np.zeros(x.size)
        if self.p.inequality_vjp is not None:
            return np.asarray(self.p.inequality_vjp(x, wts), float)
        return self._jac("i", self.p.inequality, x, wts.size).T @ wts

    def eq_vjp(self, x, wts):
        if not wts.size or not np.any(wts):
            return np.zeros(x.size)
        if self.p.equality_vjp is not None:
            return np.asarray(self.p.equality_vjp(x, wts), float)
        return self._jac("e", self.p.equality, x, wts.size).T @ wts

    def _jac(self, tag, fun, x, m):
        key = (tag, x.tobytes())
        if key not in self._jac_cache:
            explicit = self.p.inequality_jac if tag == "i" else self.p.equality_jac
            if explicit is not None:
                J = np.asarray(explicit(x), float)
            else:
                J = _fd_jacobian(fun, x, m, self.opts.fd_step)
            if len(self._jac_cache) > 4:
                self._jac_cache.clear()
            self._jac_cache[key] = J
        return self._jac_cache[key]


def _projected_grad_norm(x, grad, lo, hi):
    step = np.clip(x - grad, lo, hi) - x
    return float(np.max(np.abs(step), initial=0.0))


def _solve_single(problem, x0, opts, negate, lam0=None, nu0=None):
    ev = _Evaluator(problem, opts, negate)
    lo, hi = problem.var_lower, problem.var_upper

    # Internal variable scaling: map finite boxes to comparable magnitudes so
    # the quasi-Newton inner solves are well conditioned.
    finite = np.isfinite(lo) & np.isfinite(hi)
    scale = np.ones(problem.n_vars)
    scale[finite] = np.maximum(1e-8, 0.5 * (hi[finite] - lo[finite]))
    lo_s, hi_s = lo / scale, hi / scale

    x = np.clip(np.asarray(x0, float), lo, hi)
    f, g, h = ev.evals(x)
    m_i, m_e = g.size, h.size
    lam = np.zeros(m_i) if lam0 is None else np.asarray(lam0, float).copy()
    nu = np.zeros(m_e) if nu0 is None else np.asarray(nu0, float).copy()
    mu = opts.mu0

    def feas_of(g, h):
        vi = float(np.max(np.maximum(g, 0.0), initial=0.0))
        ve = float(np.max(np.abs(h), initial=0.0))
        return max(vi, ve)

    best_infeas = (np.inf, x.copy())
    feas_prev = feas_of(g, h)
    inner_gtol = max(opts.tol_stat, 1e-3)
    status = "max_iter"
    outer = 0

    for outer in range(1, opts.max_iter + 1):

        def merit_and_grad(y):
            xx = y * scale
            f, g, h = ev.evals(xx)
            if ev.diverged_last:
                return _BIG, np.zeros_like(y)
            wg = np.maximum(0.0, lam + mu * g)
            phi = f + (np.dot(wg, wg) - np.dot(lam, lam)) / (2.0 * mu)
            if m_e:
                phi += np.dot(nu, h) + 0.5 * mu * np.dot(h, h)
            grad = ev.obj_grad(xx)
            if m_i:
                grad = grad + ev.ineq_vjp(xx, wg)
            if m_e:
                grad = grad + ev.eq_vjp(xx, nu + mu * h)
            return phi, grad * scale

        res = _scipy_minimize(
            merit_and_grad,
            x / scale,
            jac=True,
            method="L-BFGS-B",
            bounds=np.stack([lo_s, hi_s], axis=1),
            options={
                "maxiter": opts.inner_maxiter,
                "maxcor": opts.lbfgs_maxcor,
                "gtol": inner_gtol,
                "ftol": 1e-16,
                "maxls": 60,
            },
        )
        x = np.clip(res.x * scale, lo, hi)
        f, g, h = ev.evals(x)
        if ev.diverged_last:
            return _finish(problem, ev, x, "diverged", outer, lam, nu, negate, opts)
        feas = feas_of(g, h)
        if feas < best_infeas[0]:
            best_infeas = (feas, x.copy())

        lam = np.maximum(0.0, lam + mu * g)
        if m_e:
            nu = nu + mu * h

        lagr_grad = ev.obj_grad(x)
        if m_i:
            lagr_grad = lagr_grad + ev.ineq_vjp(x, lam)
        if m_e:
            lagr_grad = lagr_grad + ev.eq_vjp(x, nu)
        stat = _projected_grad_norm(x, lagr_grad, lo, hi)

        if feas <= opts.tol_feas and stat <= opts.tol_stat:
            status = "converged"
            break
        if feas > 0.5 * feas_prev and feas > opts.tol_feas:
            mu = min(mu * opts.mu_growth, 1e14)
        feas_prev = feas
        inner_gtol = max(0.2 * opts.tol_stat, 0.25 * inner_gtol)
        if mu >= 1e14 and feas > opts.tol_feas:
            status = "infeasible"
            x = best_infeas[1]
            break

    if status == "max_iter" and feas_of(*ev.evals(x)[1:]) > opts.tol_feas * 10:
        status = "infeasible"
        x = best_infeas[1]
    return _finish(problem, ev, x, status, outer, lam, nu, negate, opts)


def _finish(problem, ev, x, status, iters, lam, nu, negate, opts):
    kkt = check_kkt(problem, x, max(opts.tol_feas, opts.tol_stat), multipliers=(lam, nu), _ev=ev)
    try:
        fval = float(problem.objective(x))
    except (ArithmeticError, RuntimeError):
        fval, status = np.nan, "diverged"
    if status == "converged" and not kkt.passed:
        # Honest downgrade: AL thought it converged but the independent KKT
        # check disagrees (rare, e.g. degenerate active sets).
        status = "max_iter" if kkt.feasibility <= 10 * opts.tol_feas else "infeasible"
    return NlpResult(
        x_star=x,
        objective_value=fval,
        status=status,
        kkt=kkt,
        iterations=iters,
        multipliers_ineq=lam,
        multipliers_eq=nu,
        nfev=ev.nfev,
    )


def solve(
    problem: NlpProblem,
    x0,
    opts: SolverOptions = SolverOptions(),
    lam0=None,
    nu0=None,
) -> NlpResult:
    """Solve the NLP from x0, optionally with multistart.

    Returns a KKT point to the declared tolerances or a non-converged status
    with the best iterate found.  Deterministic for a fixed ``opts.rng_seed``:
    start points are x0 plus ``multistart_count - 1`` uniform draws in the box
    (coordinates with infinite bounds stay at x0), and ties between equally
    good results resolve to the lowest start index.
    """
    negate = problem.sense == "max"
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (problem.n_vars,):
        raise ValueError(f"x0 has shape {x0.shape}, expected ({problem.n_vars},)")

    starts = [x0]
    if opts.multistart_count > 1:
        rng = np.random.default_rng(opts.rng_seed)
        lo, hi = problem.var_lower, problem.var_upper
        finite = np.isfinite(lo) & np.isfinite(hi)
        for _ in range(opts.multistart_count - 1):
            draw = x0.copy()
            draw[finite] = rng.uniform(lo[finite], hi[finite])
            starts.append(draw)

    results = []
    for i, s in enumerate(starts):
        r = _solve_single(problem, s, opts, negate, lam0=lam0, nu0=nu0)
        r.start_index = i
        results.append(r)

    def rank(r: NlpResult):
        feas_ok = r.status in ("converged", "max_iter") and r.kkt.feasibility <= 10 * opts.tol_feas
        obj = r.objective_value if np.isfinite(r.objective_value) else np.inf
        signed = -obj if negate else obj  # lower is better in min space
        return (not feas_ok, signed, r.start_index)

    return min(results, key=rank)


def check_kkt(problem: NlpProblem, x, tol: float, multipliers=None, _ev=None) -> KktReport:
    """First-order KKT residuals at x.

    Without ``multipliers``, active inequality and bound rows get
    sign-constrained multipliers fit by bounded least squares (Jacobian rows
    come from the problem's Jacobian, its VJP probed with unit weights, or
    finite differences).  With ``multipliers=(lam, nu)`` — e.g. the augmented
    Lagrangian estimates — stationarity is the projected gradient of the
    Lagrangian built from them, which needs a single adjoint evaluation and
    scales to problems with very many rows.  Complementarity is the worst
    |lambda_i * g_i|.
    """
    x = np.clip(np.asarray(x, dtype=float), problem.var_lower, problem.var_upper)
    ev = _ev or _Evaluator(problem, SolverOptions(), negate=(problem.sense == "max"))
    f, g, h = ev.evals(x)
    lo, hi = problem.var_lower, problem.var_upper

    ineq_viol = np.maximum(g, 0.0) if g.size else np.zeros(0)
    eq_viol = np.abs(h) if h.size else np.zeros(0)
    bviol = float(np.max(np.maximum(lo - x, 0.0) + np.maximum(x - hi, 0.0), initial=0.0))
    feasibility = max(
        float(np.max(ineq_viol, initial=0.0)),
        float(np.max(eq_viol, initial=0.0)),
        bviol,
    )

    grad_f = ev.obj_grad(x)

    if multipliers is not None:
        lam_full = np.asarray(multipliers[0], float)
        nu_full = np.asarray(multipliers[1], float)
        lagr = grad_f.copy()
        if lam_full.size:
            lagr += ev.ineq_vjp(x, lam_full)
        if nu_full.size:
            lagr += ev.eq_vjp(x, nu_full)
        stationarity = _projected_grad_norm(x, lagr, lo, hi)
    else:
        act_tol = max(tol, 1e-8)
        cols = []
        col_kind = []
        active_idx = np.where(g >= -np.sqrt(act_tol))[0] if g.size else np.zeros(0, dtype=int)
        if active_idx.size:
            Ji = _ineq_jac_rows(problem, ev, x, g.size, active_idx)
            for row, i in zip(Ji, active_idx):
                cols.append(row)
                col_kind.append(("ineq", int(i)))
        if h.size:
            Je = ev._jac("e", problem.equality, x, h.size)
            for j in range(h.size):
                cols.append(Je[j])
                col_kind.append(("eq", int(j)))
        for i in range(x.size):
            if np.isfinite(lo[i]) and x[i] - lo[i] <= np.sqrt(act_tol) * max(1, abs(lo[i])):
                e = np.zeros(x.size)
                e[i] = -1.0
                cols.append(e)
                col_kind.append(("lo", i))
            if np.isfinite(hi[i]) and hi[i] - x[i] <= np.sqrt(act_tol) * max(1, abs(hi[i])):
                e = np.zeros(x.size)
                e[i] = 1.0
                cols.append(e)
                col_kind.append(("hi", i))

        lam_full = np.zeros(g.size)
        nu_full = np.zeros(h.size)
        if cols:
            A = np.stack(cols, axis=1)
            lb = np.array([0.0 if kind != "eq" else -np.inf for kind, _ in col_kind])
            ub = np.full(len(cols), np.inf)
            sol = lsq_linear(A, -grad_f, bounds=(lb, ub))
            resid = grad_f + A @ sol.x
            for c, (kind, idx) in enumerate(col_kind):
                if kind == "ineq":
                    lam_full[idx] = sol.x[c]
                elif kind == "eq":
                    nu_full[idx] = sol.x[c]
            stationarity = float(np.max(np.abs(resid), initial=0.0))
        else:
            stationarity = _projected_grad_norm(x, grad_f, lo, hi)

    comp = float(np.max(np.abs(lam_full * g), initial=0.0)) if g.size and lam_full.size == g.size else 0.0
    passed = feasibility <= max(tol, 1e-12) and stationarity <= max(tol, 1e-12)
    return KktReport(
        stationarity=stationarity,
        feasibility=feasibility,
        complementarity=comp,
        ineq_violation=ineq_viol,
        eq_violation=eq_viol,
        bound_violation=bviol,
        multipliers_ineq=lam_full,
        multipliers_eq=nu_full,
        passed=passed,
    )


def _ineq_jac_rows(problem, ev, x, m, rows):
    """Jacobian rows for the requested inequality indices, cheapest path first."""
    if problem.inequality_jac is not None:
        return np.asarray(problem.inequality_jac(x), float)[rows]
    if problem.inequality_vjp is not None:
        out = []
        for i in rows:
            w = np.zeros(m)
            w[i] = 1.0
            out.append(np.asarray(problem.inequality_vjp(x, w), float))
        return np.asarray(out)
    return ev._jac("i", problem.inequality, x, m)[rows]
