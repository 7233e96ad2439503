"""Scenario generation by local reduction (exact and inexact exchange loops).

The loop alternates two smooth NLPs:

* the *minimization step* optimizes the policy (q, r, gamma) against the
  current finite scenario set, enforcing every stage constraint and the
  epigraph row J - gamma <= 0 for every member scenario;
* the *maximization step* searches the uncertainty box for the worst
  violation of any single constraint, decomposed into 1 + n_g*(N-1)
  independent subproblems (one for the cost bound, one per constraint row and
  stage), which may run in parallel.

A worst case with violation above ``tol_violation`` is appended to the set
(exact variant), unless it is similar to a member in the sense of the
squared-distance test implemented by :func:`similar` (inexact variant);
the loop ends when the set stops growing.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .nlp import NlpProblem, NlpResult, SolverOptions, solve
from .ocp import (
    ContractViolation,
    PolicyPoint,
    RobustOcp,
    Scenario,
    evaluate,
    stage_constraint_values,
)


@dataclass(frozen=True)
class ReductionOptions:
    eps_w: float = 0.001
    eps_d: float = 0.001
    tol_violation: float = 1e-6
    max_outer_iters: int = 200
    drop_inactive: bool = False
    parallel_max: bool = True
    rng_seed: int = 0
    add_top_k: int = 1
    early_exit_threshold: float = np.inf
    p_des: Optional[float] = None
    delta: Optional[float] = None
    max_workers: int = 8
    min_solver: SolverOptions = field(
        default_factory=lambda: SolverOptions(tol_feas=1e-7, tol_stat=1e-5, max_iter=60)
    )
    max_solver: SolverOptions = field(
        default_factory=lambda: SolverOptions(tol_feas=1e-8, tol_stat=1e-7, max_iter=25)
    )

    def __post_init__(self):
        if self.eps_w < 0 or self.eps_d < 0:
            raise ValueError("similarity tolerances must be non-negative")
        if self.tol_violation <= 0:
            raise ValueError("tol_violation must be positive")


@dataclass(frozen=True)
class ScenarioRecord:
    """A member of the scenario set with its provenance."""

    scenario: Scenario
    iteration: int
    source: str  # "initial" | "objective" | "g[h=..,k=..]"
    violation: float  # worst-case violation that caused the add (nan for initial)


@dataclass
class MaxStepResult:
    worst: Scenario
    violation: float
    source: str
    values: list  # (source, value or None) per subproblem, scan order
    times: np.ndarray
    candidates: list  # (value, source, Scenario) for violating subproblems, sorted desc


@dataclass
class IterationRecord:
    iteration: int
    n_scenarios: int
    gamma: float
    min_time: float = np.nan
    min_status: str = ""
    max_time: float = np.nan
    max_times: Optional[np.ndarray] = None
    worst_violation: float = np.nan
    worst_source: str = ""
    added: int = 0
    dropped: int = 0


@dataclass
class ReductionReport:
    ocp_name: str
    final_policy: PolicyPoint
    records: list  # ScenarioRecord, insertion order
    iterations: list  # IterationRecord
    termination: str  # converged | stalled | max_iters | min_solve_failed | cardinality_stop
    tol_violation: float
    wall_time: float

    @property
    def scenario_set(self):
        return [rec.scenario for rec in self.records]

    @property
    def n_scenarios(self):
        return len(self.records)


def similar(s1: Scenario, s2: Scenario, eps_w: float, eps_d: float) -> bool:
    """Scenario similarity: (1/N)||w1-w2||_2^2 <= eps_w and ||d1-d2||_2^2 <= eps_d.

    Both tests are boundary-inclusive; dimensions must agree.
    """
    if s1.w.shape != s2.w.shape or s1.d.shape != s2.d.shape:
        raise ContractViolation("scenario dimension mismatch")
    N = max(s1.w.shape[0], 1)
    dw = float(np.sum((s1.w - s2.w) ** 2)) / N
    dd = float(np.sum((s1.d - s2.d) ** 2))
    return dw <= eps_w and dd <= eps_d


# ---------------------------------------------------------------------------
# NLP assembly
# ---------------------------------------------------------------------------


class _PolicyNlp:
    """min gamma over (q, r, gamma) s.t. all constraints of all scenarios.

    Inequality layout: for each scenario, N*n_g stage-constraint rows followed
    by one epigraph row J - gamma.  Uses the model kernel's batched forward
    and adjoint when available, falling back to the generic simulator.
    """

    def __init__(self, ocp: RobustOcp, scenarios: Sequence[Scenario]):
        self.ocp = ocp
        self.scenarios = list(scenarios)
        self.S = len(self.scenarios)
        self.Ws = np.stack([s.w for s in self.scenarios])
        self.Ds = np.stack([s.d for s in self.scenarios])
        self.rows_per = ocp.horizon * ocp.n_g + 1
        self._cache = {}

    def _forward(self, z):
        key = z.tobytes()
        if key not in self._cache:
            ocp = self.ocp
            q, r = z[: ocp.n_q], z[ocp.n_q : ocp.n_q + ocp.n_r]
            if ocp.kernel is not None:
                X, U = ocp.kernel.simulate_many(q, r, self.Ws, self.Ds)
                Js, Gs = ocp.kernel.outputs_many(q, r, self.Ws, self.Ds, X, U)
            else:
                p = PolicyPoint(q, r, 0.0)
                Js = np.zeros(self.S)
                Gs = np.zeros((self.S, ocp.horizon, ocp.n_g))
                X = U = None
                trajs = []
                for i, s in enumerate(self.scenarios):
                    try:
                        traj, J, G = evaluate(ocp, p, s, use_kernel=False)
                    except RuntimeError:
                        Js[i] = np.inf
                        trajs.append(None)
                        continue
                    Js[i], Gs[i] = J, G
                    trajs.append(traj)
                X = trajs
            if len(self._cache) > 3:
                self._cache.clear()
            self._cache[key] = (X, U, Js, Gs)
        return self._cache[key]

    def n_vars(self):
        return self.ocp.n_q + self.ocp.n_r + 1

    def inequality(self, z):
        X, U, Js, Gs = self._forward(z)
        gamma = z[-1]
        out = np.empty(self.S * self.rows_per)
        for i in range(self.S):
            base = i * self.rows_per
            out[base : base + self.rows_per - 1] = Gs[i].ravel()
            out[base + self.rows_per - 1] = Js[i] - gamma
        return out

    def inequality_vjp(self, z, wts):
        ocp = self.ocp
        X, U, Js, Gs = self._forward(z)
        Wm = wts.reshape(self.S, self.rows_per)
        WG = Wm[:, :-1].reshape(self.S, ocp.horizon, ocp.n_g)
        wJ = Wm[:, -1].copy()
        if ocp.kernel is not None:
            gq, gr = ocp.kernel.vjp_many(
                z[: ocp.n_q], z[ocp.n_q : ocp.n_q + ocp.n_r], self.Ws, self.Ds, X, U, wJ, WG
            )
        else:
            gq = np.zeros(ocp.n_q)
            gr = np.zeros(ocp.n_r)
            raise ContractViolation(
                "analytic adjoints unavailable: model has no kernel; "
                "use finite-difference jacobians via inequality_jac instead"
            )
        return np.concatenate([gq, gr, [-wJ.sum()]])

    def problem(self):
        ocp = self.ocp
        n = self.n_vars()
        grad_obj = np.zeros(n)
        grad_obj[-1] = 1.0
        has_kernel = ocp.kernel is not None
        return NlpProblem(
            n_vars=n,
            objective=lambda z: float(z[-1]),
            gradient=lambda z: grad_obj.copy(),
            inequality=self.inequality,
            inequality_vjp=self.inequality_vjp if has_kernel else None,
            var_lower=ocp.decision_box.lower(),
            var_upper=ocp.decision_box.upper(),
            sense="min",
        )


class _MaxNlp:
    """max of one scalar output over (w, d) in the uncertainty box at fixed policy."""

    def __init__(self, ocp: RobustOcp, p: PolicyPoint, source):
        self.ocp = ocp
        self.p = p
        self.source = source  # ("objective",) or ("g", h, k)
        self._cache = {}

    def split(self, v):
        N, n_w = self.ocp.horizon, self.ocp.n_w
        return v[: N * n_w].reshape(N, n_w), v[N * n_w :]

    def _forward(self, v):
        key = v.tobytes()
        if key not in self._cache:
            w, d = self.split(v)
            ocp, p = self.ocp, self.p
            if ocp.kernel is not None:
                x, u = ocp.kernel.simulate(p.q, p.r, w, d)
                J, G = ocp.kernel.outputs(p.q, p.r, w, d, x, u)
            else:
                traj, J, G = evaluate(ocp, p, Scenario(w, d), use_kernel=False)
                x, u = traj.x, traj.u
            if len(self._cache) > 3:
                self._cache.clear()
            self._cache[key] = (x, u, J, G)
        return self._cache[key]

    def objective(self, v):
        x, u, J, G = self._forward(v)
        if self.source[0] == "objective":
            return float(J - self.p.gamma)
        _, h, k = self.source
        return float(G[k, h])

    def gradient(self, v):
        if self.ocp.kernel is None:
            return None
        x, u, J, G = self._forward(v)
        ocp, p = self.ocp, self.p
        w, d = self.split(v)
        WG = np.zeros((ocp.horizon, ocp.n_g))
        wJ = 0.0
        if self.source[0] == "objective":
            wJ = 1.0
        else:
            _, h, k = self.source
            WG[k, h] = 1.0
        gq, gr, gw, gd = ocp.kernel.vjp(p.q, p.r, w, d, x, u, wJ, WG)
        return np.concatenate([gw.ravel(), gd])

    def problem(self):
        box = self.ocp.uncertainty
        lo = np.concatenate([box.w_lower.ravel(), box.d_lower])
        hi = np.concatenate([box.w_upper.ravel(), box.d_upper])
        grad = self.gradient if self.ocp.kernel is not None else None
        return NlpProblem(
            n_vars=lo.size,
            objective=self.objective,
            gradient=grad,
            var_lower=lo,
            var_upper=hi,
            sense="max",
        )


def _source_label(source):
    if source[0] == "objective":
        return "objective"
    return f"g[h={source[1]},k={source[2]}]"


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def solve_policy(
    ocp: RobustOcp,
    scenarios: Sequence[Scenario],
    theta0: Optional[PolicyPoint] = None,
    opts: Optional[SolverOptions] = None,
    lam0=None,
) -> tuple[PolicyPoint, NlpResult]:
    """One minimization step: optimize (q, r, gamma) against a fixed scenario set.

    After the solve, gamma is lifted to max(gamma, max_i J_i) so the epigraph
    rows hold exactly at the returned policy (the objective is gamma itself,
    so this costs at most the solver's feasibility tolerance).
    """
    if not scenarios:
        raise ContractViolation("scenario set must be non-empty")
    opts = opts or SolverOptions()
    builder = _PolicyNlp(ocp, scenarios)
    prob = builder.problem()
    lo, hi = prob.var_lower, prob.var_upper
    if theta0 is None:
        z0 = np.clip(np.zeros(prob.n_vars), lo, hi)
    else:
        z0 = np.clip(theta0.flat(), lo, hi)
    # Feasible epigraph start: gamma at least the current worst member cost.
    _, _, Js, _ = builder._forward(z0)
    if np.all(np.isfinite(Js)):
        z0[-1] = min(max(z0[-1], float(Js.max()) * 1.001 + 1e-9), hi[-1])
    res = solve(prob, z0, opts, lam0=lam0)
    z = res.x_star.copy()
    _, _, Js, _ = builder._forward(z)
    if np.all(np.isfinite(Js)):
        z[-1] = min(max(z[-1], float(Js.max())), hi[-1])
    policy = PolicyPoint.from_flat(z, ocp.n_q, ocp.n_r)
    return policy, res


def _max_sources(ocp: RobustOcp):
    """Scan order of the 1 + n_g*(N-1) subproblems: objective first, then (h, k)."""
    sources = [("objective",)]
    for h in range(ocp.n_g):
        for k in range(1, ocp.horizon):
            sources.append(("g", h, k))
    return sources


def maximization_step(
    ocp: RobustOcp, p: PolicyPoint, opts: Optional[ReductionOptions] = None
) -> MaxStepResult:
    """Worst-case search at fixed policy.

    Solves one maximization per source (cost bound, then each constraint row
    at each stage k = 1..N-1), each over the full (w, d) box starting from the
    box midpoint (plus multistart draws when configured).  Returns the argmax
    scenario; ties resolve to the earliest source in scan order.  Diverged
    subproblems are recorded as None and skipped; if all diverge the step
    raises :class:`MaxStepFailure`.
    """
    opts = opts or ReductionOptions()
    ocp.check_policy(p)
    sources = _max_sources(ocp)
    box = ocp.uncertainty
    v0 = np.concatenate([(0.5 * (box.w_lower + box.w_upper)).ravel(),
                         0.5 * (box.d_lower + box.d_upper)])

    def run_one(idx):
        t0 = time.perf_counter()
        src = sources[idx]
        sub = _MaxNlp(ocp, p, src)
        sopts = replace(opts.max_solver, rng_seed=opts.max_solver.rng_seed + 7919 * idx)
        try:
            res = solve(sub.problem(), v0, sopts)
            if not np.isfinite(res.objective_value):
                return idx, None, None, time.perf_counter() - t0
            w, d = sub.split(res.x_star)
            return idx, float(res.objective_value), Scenario(w.copy(), d.copy()), time.perf_counter() - t0
        except RuntimeError:
            return idx, None, None, time.perf_counter() - t0

    n_sub = len(sources)
    results = [None] * n_sub
    sequential = not opts.parallel_max or np.isfinite(opts.early_exit_threshold)
    if sequential:
        for i in range(n_sub):
            results[i] = run_one(i)
            val = results[i][1]
            if val is not None and val > opts.early_exit_threshold:
                break
    else:
        with ThreadPoolExecutor(max_workers=opts.max_workers) as ex:
            for out in ex.map(run_one, range(n_sub)):
                results[out[0]] = out

    values = []
    times = np.full(n_sub, np.nan)
    best_val, best_scen, best_src = -np.inf, None, None
    candidates = []
    for entry in results:
        if entry is None:  # early exit skipped the tail
            continue
        idx, val, scen, dt = entry
        times[idx] = dt
        values.append((_source_label(sources[idx]), val))
        if val is None:
            continue
        if val > best_val:
            best_val, best_scen, best_src = val, scen, _source_label(sources[idx])
        if val > opts.tol_violation:
            candidates.append((val, _source_label(sources[idx]), scen))
    if best_scen is None:
        raise MaxStepFailure("all maximization subproblems diverged")
    candidates.sort(key=lambda t: -t[0])
    return MaxStepResult(
        worst=best_scen,
        violation=best_val,
        source=best_src,
        values=values,
        times=times,
        candidates=candidates,
    )


class MaxStepFailure(RuntimeError):
    pass


def drop_inactive(ocp: RobustOcp, p: PolicyPoint, H: Sequence[Scenario], tol: float):
    """Prune scenarios whose constraint aggregate is strictly below -tol.

    Only valid for problems whose cost does not depend on the uncertainty
    (the constraint-dropping convergence argument needs that form), which the
    caller asserts by constructing the RobustOcp with
    ``cost_independent_of_uncertainty=True``.  The most-violating scenario is
    always kept, as are all active ones.
    """
    if not ocp.cost_independent_of_uncertainty:
        raise ContractViolation(
            "constraint dropping requires cost_independent_of_uncertainty=True"
        )
    if not H:
        return []
    vals = []
    for s in H:
        _, _, G = evaluate(ocp, p, s)
        vals.append(float(np.max(G)) if G.size else -np.inf)
    keep_idx = int(np.argmax(vals))
    return [s for i, s in enumerate(H) if vals[i] >= -tol or i == keep_idx]


# ---------------------------------------------------------------------------
# Reduction loops
# ---------------------------------------------------------------------------


def exact_reduce(
    ocp: RobustOcp,
    initial_set: Sequence[Scenario],
    opts: Optional[ReductionOptions] = None,
    theta0: Optional[PolicyPoint] = None,
) -> ReductionReport:
    """Exact local reduction: always add the worst scenario until none violates."""
    return _reduce(ocp, initial_set, opts or ReductionOptions(), theta0, use_similarity=False)


def inexact_reduce(
    ocp: RobustOcp,
    initial_set: Sequence[Scenario],
    opts: Optional[ReductionOptions] = None,
    theta0: Optional[PolicyPoint] = None,
) -> ReductionReport:
    """Inexact local reduction: a worst case is added only if it is dissimilar
    to every member of the current set (eps_w, eps_d from ``opts``)."""
    return _reduce(ocp, initial_set, opts or ReductionOptions(), theta0, use_similarity=True)


def _is_duplicate(cand: Scenario, members, use_similarity, eps_w, eps_d):
    if use_similarity:
        return any(similar(cand, s, eps_w, eps_d) for s in members)
    return any(cand.same_as(s) for s in members)


def _reduce(ocp, initial_set, opts, theta0, use_similarity):
    if not initial_set:
        raise ContractViolation("initial scenario set must be non-empty")
    for s in initial_set:
        ocp.check_scenario(s)
    t_start = time.perf_counter()
    records = [
        ScenarioRecord(scenario=s, iteration=0, source="initial", violation=np.nan)
        for s in initial_set
    ]
    iterations = []

    cardinality_cap = None
    if opts.p_des is not None and opts.delta is not None:
        from .bounds import min_scenarios

        cardinality_cap = min_scenarios(opts.p_des, opts.delta, ocp.n_g)

    def members():
        return [rec.scenario for rec in records]

    t0 = time.perf_counter()
    policy, res = solve_policy(ocp, members(), theta0, opts.min_solver)
    it0 = IterationRecord(
        iteration=0,
        n_scenarios=len(records),
        gamma=policy.gamma,
        min_time=time.perf_counter() - t0,
        min_status=res.status,
    )
    iterations.append(it0)
    if res.status in ("infeasible", "diverged"):
        return ReductionReport(
            ocp.name, policy, records, iterations, "min_solve_failed",
            opts.tol_violation, time.perf_counter() - t_start,
        )

    termination = "max_iters"
    for j in range(1, opts.max_outer_iters + 1):
        rec = IterationRecord(iteration=j, n_scenarios=len(records), gamma=policy.gamma)
        t0 = time.perf_counter()
        step = maximization_step(ocp, policy, opts)
        rec.max_time = time.perf_counter() - t0
        rec.max_times = step.times
        rec.worst_violation = step.violation
        rec.worst_source = step.source
        iterations.append(rec)

        if step.violation <= opts.tol_violation:
            termination = "converged"
            break

        fresh = []
        for val, label, cand in step.candidates:
            if len(fresh) >= opts.add_top_k:
                break
            pool = members() + [f.scenario for f in fresh]
            if not _is_duplicate(cand, pool, use_similarity, opts.eps_w, opts.eps_d):
                fresh.append(ScenarioRecord(cand, j, label, val))
        if not fresh:
            termination = "stalled"
            break

        if opts.drop_inactive and ocp.cost_independent_of_uncertainty:
            kept = drop_inactive(ocp, policy, members(), opts.tol_violation)
            kept_keys = {id(s) for s in kept}
            before = len(records)
            records = [r for r in records if id(r.scenario) in kept_keys]
            rec.dropped = before - len(records)

        records.extend(fresh)
        rec.added = len(fresh)

        if cardinality_cap is not None and len(records) >= cardinality_cap:
            termination = "cardinality_stop"
            t0 = time.perf_counter()
            policy, res = solve_policy(ocp, members(), policy, opts.min_solver)
            rec.min_time = time.perf_counter() - t0
            rec.min_status = res.status
            break

        t0 = time.perf_counter()
        policy, res = solve_policy(ocp, members(), policy, opts.min_solver)
        rec.min_time = time.perf_counter() - t0
        rec.min_status = res.status
        if res.status in ("infeasible", "diverged"):
            termination = "min_solve_failed"
            break

    return ReductionReport(
        ocp.name, policy, records, iterations, termination,
        opts.tol_violation, time.perf_counter() - t_start,
    )
