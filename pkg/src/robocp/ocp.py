"""Core problem objects: uncertain dynamics, policies, trajectories, constraints.

The central object is :class:`RobustOcp`, a finite-horizon discrete-time
optimal control problem whose dynamics, cost and stage constraints depend on
a time-varying disturbance trajectory ``w`` (one row per step) and a constant
parameter vector ``d``.  A :class:`Scenario` is one realisation ``(w, d)``;
a :class:`PolicyPoint` collects the decision variables ``(q, r, gamma)`` of
the outer minimization, where ``gamma`` is the scalar cost upper bound.

All containers are immutable after construction and the evaluators below are
pure functions, so everything here is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np


class ContractViolation(ValueError):
    """A caller broke a documented precondition (dimensions, empty sets, flags)."""


class DivergedTrajectory(RuntimeError):
    """Simulation produced a non-finite state; ``step_index`` is the first bad step."""

    def __init__(self, step_index, message=None):
        self.step_index = step_index
        super().__init__(message or f"non-finite state at step {step_index}")


class DivergedCost(RuntimeError):
    """Cost accumulation hit a non-finite intermediate value."""


def _as_2d(a, name):
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ContractViolation(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class UncertaintyBox:
    """Compact box for the uncertainty: per-step bounds on w, constant bounds on d.

    ``w_lower``/``w_upper`` have shape (N, n_w); ``d_lower``/``d_upper`` have
    shape (n_d,).  Bounds must be finite with lower <= upper elementwise.
    """

    w_lower: np.ndarray
    w_upper: np.ndarray
    d_lower: np.ndarray
    d_upper: np.ndarray

    def __post_init__(self):
        wl = _as_2d(self.w_lower, "w_lower")
        wu = _as_2d(self.w_upper, "w_upper")
        dl = np.atleast_1d(np.asarray(self.d_lower, dtype=float))
        du = np.atleast_1d(np.asarray(self.d_upper, dtype=float))
        if wl.shape != wu.shape:
            raise ContractViolation("w bounds shape mismatch")
        if dl.shape != du.shape:
            raise ContractViolation("d bounds shape mismatch")
        for a in (wl, wu, dl, du):
            if not np.all(np.isfinite(a)):
                raise ContractViolation("uncertainty box bounds must be finite")
        if np.any(wl > wu) or np.any(dl > du):
            raise ContractViolation("lower bound exceeds upper bound")
        for name, val in (("w_lower", wl), ("w_upper", wu), ("d_lower", dl), ("d_upper", du)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def horizon(self):
        return self.w_lower.shape[0]

    @property
    def n_w(self):
        return self.w_lower.shape[1]

    @property
    def n_d(self):
        return self.d_lower.shape[0]

    def midpoint(self) -> "Scenario":
        """Nominal scenario: box midpoints for both w and d."""
        return Scenario(0.5 * (self.w_lower + self.w_upper), 0.5 * (self.d_lower + self.d_upper))

    def corner(self, upper: bool) -> "Scenario":
        w = self.w_upper if upper else self.w_lower
        d = self.d_upper if upper else self.d_lower
        return Scenario(w.copy(), d.copy())

    def contains(self, s: "Scenario", atol=1e-12) -> bool:
        return bool(
            np.all(s.w >= self.w_lower - atol)
            and np.all(s.w <= self.w_upper + atol)
            and np.all(s.d >= self.d_lower - atol)
            and np.all(s.d <= self.d_upper + atol)
        )

    def sample(self, rng: np.random.Generator) -> "Scenario":
        """One uniform draw: w elementwise per step, d once."""
        w = rng.uniform(self.w_lower, self.w_upper) if self.w_lower.size else np.zeros_like(self.w_lower)
        d = rng.uniform(self.d_lower, self.d_upper) if self.d_lower.size else np.zeros_like(self.d_lower)
        return Scenario(w, d)


@dataclass(frozen=True)
class Scenario:
    """One realisation of the uncertainty: w is (N, n_w), d is (n_d,)."""

    w: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        w = _as_2d(self.w, "w")
        d = np.atleast_1d(np.asarray(self.d, dtype=float))
        w.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "d", d)

    def same_as(self, other: "Scenario") -> bool:
        """Exact (bitwise) equality; used for the set-union semantics of H."""
        return (
            self.w.shape == other.w.shape
            and self.d.shape == other.d.shape
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.d, other.d)
        )


@dataclass(frozen=True)
class PolicyPoint:
    """Decision variables of the outer minimization: (q, r, gamma)."""

    q: np.ndarray
    r: np.ndarray
    gamma: float

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        r = np.atleast_1d(np.asarray(self.r, dtype=float)) if np.size(self.r) else np.zeros(0)
        q.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "gamma", float(self.gamma))

    def flat(self) -> np.ndarray:
        """Concatenated (q, r, gamma) in solver ordering."""
        return np.concatenate([self.q, self.r, [self.gamma]])

    @staticmethod
    def from_flat(z, n_q, n_r) -> "PolicyPoint":
        z = np.asarray(z, dtype=float)
        return PolicyPoint(z[:n_q].copy(), z[n_q : n_q + n_r].copy(), float(z[n_q + n_r]))


@dataclass(frozen=True)
class DecisionBox:
    """Box bounds on the decision variables (q, r, gamma)."""

    q_lower: np.ndarray
    q_upper: np.ndarray
    r_lower: np.ndarray
    r_upper: np.ndarray
    gamma_lower: float = -1e12
    gamma_upper: float = 1e12

    def lower(self) -> np.ndarray:
        return np.concatenate([self.q_lower, self.r_lower, [self.gamma_lower]])

    def upper(self) -> np.ndarray:
        return np.concatenate([self.q_upper, self.r_upper, [self.gamma_upper]])


@dataclass(frozen=True)
class Trajectory:
    """Simulated closed-loop trajectory: x is (N+1, n_x), u is (N, n_u)."""

    x: np.ndarray
    u: np.ndarray

    def __post_init__(self):
        x = _as_2d(self.x, "x")
        u = _as_2d(self.u, "u")
        x.setflags(write=False)
        u.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "u", u)

    def stacked(self) -> np.ndarray:
        """Flat (x, u) vector, the z used for trajectory-norm bounds."""
        return np.concatenate([self.x.ravel(), self.u.ravel()])


@dataclass(frozen=True)
class RobustOcp:
    """Finite-horizon uncertain OCP with a parameterised causal feedback policy.

    ``step(k, x_k, u_k, w_k, d) -> x_{k+1}`` advances the plant;
    ``policy(k, x_hist, q, r) -> u_k`` maps the state history (rows x_0..x_k)
    to the applied input.  Any smooth input saturation is part of the policy,
    so trajectories store the control actually applied to the plant.
    ``stage_constraints(k, x_k, u_k, w_k, d)`` returns n_g values with the
    convention value <= 0 feasible.

    ``kernel`` optionally provides fused fast-path simulation and adjoint
    gradients (see robocp.kernels); the callable path below is the reference
    semantics and the two must agree to round-off.
    """

    name: str
    horizon: int
    n_x: int
    n_u: int
    n_w: int
    n_d: int
    n_g: int
    n_q: int
    n_r: int
    initial_state: Callable[[np.ndarray], np.ndarray]
    step: Callable
    policy: Callable
    stage_cost: Callable
    terminal_cost: Callable
    stage_constraints: Callable
    uncertainty: UncertaintyBox
    decision_box: DecisionBox
    kernel: object = None
    cost_independent_of_uncertainty: bool = False
    constraint_labels: Sequence[str] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.uncertainty.horizon != self.horizon or self.uncertainty.n_w != self.n_w:
            raise ContractViolation("uncertainty box does not match horizon/n_w")
        if self.uncertainty.n_d != self.n_d:
            raise ContractViolation("uncertainty box does not match n_d")

    def with_kernel(self, kernel) -> "RobustOcp":
        return replace(self, kernel=kernel)

    def nominal_scenario(self) -> Scenario:
        return self.uncertainty.midpoint()

    def check_policy(self, p: PolicyPoint):
        if p.q.shape != (self.n_q,) or p.r.shape != (self.n_r,):
            raise ContractViolation(
                f"policy dims (q:{p.q.shape}, r:{p.r.shape}) do not match "
                f"(n_q={self.n_q}, n_r={self.n_r})"
            )

    def check_scenario(self, s: Scenario):
        if s.w.shape != (self.horizon, self.n_w) or s.d.shape != (self.n_d,):
            raise ContractViolation(
                f"scenario dims (w:{s.w.shape}, d:{s.d.shape}) do not match "
                f"(N={self.horizon}, n_w={self.n_w}, n_d={self.n_d})"
            )


def simulate(ocp: RobustOcp, p: PolicyPoint, s: Scenario, use_kernel: bool = True) -> Trajectory:
    """Single-shooting closed-loop simulation of ``ocp`` under policy ``p`` and scenario ``s``.

    Deterministic; raises :class:`DivergedTrajectory` on the first non-finite
    state.  With ``use_kernel=False`` the generic callable path is forced,
    which is the reference implementation the fast kernels are tested against.
    """
    ocp.check_policy(p)
    ocp.check_scenario(s)
    if use_kernel and ocp.kernel is not None:
        x, u = ocp.kernel.simulate(p.q, p.r, s.w, s.d)
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            raise DivergedTrajectory(int(np.argmax(bad)))
        return Trajectory(x, u)

    N = ocp.horizon
    x = np.zeros((N + 1, ocp.n_x))
    u = np.zeros((N, ocp.n_u))
    x[0] = ocp.initial_state(s.d)
    if not np.all(np.isfinite(x[0])):
        raise DivergedTrajectory(0)
    for k in range(N):
        u[k] = ocp.policy(k, x[: k + 1], p.q, p.r)
        x[k + 1] = ocp.step(k, x[k], u[k], s.w[k], s.d)
        if not np.all(np.isfinite(x[k + 1])):
            raise DivergedTrajectory(k + 1)
    return Trajectory(x, u)


def total_cost(ocp: RobustOcp, traj: Trajectory, s: Scenario) -> float:
    """Cost J_N = terminal + sum of stage costs along ``traj`` under scenario ``s``."""
    N = ocp.horizon
    w_last = s.w[N - 1] if ocp.n_w else np.zeros(0)
    acc = ocp.terminal_cost(traj.x[N], w_last, s.d)
    for k in range(N):
        acc += ocp.stage_cost(k, traj.x[k], traj.u[k], s.w[k], s.d)
        if not np.isfinite(acc):
            raise DivergedCost(f"non-finite cost at stage {k}")
    if not np.isfinite(acc):
        raise DivergedCost("non-finite terminal cost")
    return float(acc)


def stage_constraint_values(ocp: RobustOcp, traj: Trajectory, s: Scenario) -> np.ndarray:
    """All stage-constraint values as an (N, n_g) matrix (<= 0 means satisfied)."""
    N = ocp.horizon
    G = np.zeros((N, ocp.n_g))
    for k in range(N):
        G[k] = ocp.stage_constraints(k, traj.x[k], traj.u[k], s.w[k], s.d)
    return G


def evaluate(ocp: RobustOcp, p: PolicyPoint, s: Scenario, use_kernel: bool = True):
    """Simulate and evaluate (trajectory, J, G) in one go, using the kernel when present."""
    ocp.check_policy(p)
    ocp.check_scenario(s)
    if use_kernel and ocp.kernel is not None:
        x, u = ocp.kernel.simulate(p.q, p.r, s.w, s.d)
        bad = ~np.isfinite(x).all(axis=1)
        if bad.any():
            raise DivergedTrajectory(int(np.argmax(bad)))
        J, G = ocp.kernel.outputs(p.q, p.r, s.w, s.d, x, u)
        if not np.isfinite(J):
            raise DivergedCost("non-finite cost")
        return Trajectory(x, u), float(J), G
    traj = simulate(ocp, p, s, use_kernel=False)
    return traj, total_cost(ocp, traj, s), stage_constraint_values(ocp, traj, s)


def aggregate_G(ocp: RobustOcp, traj: Trajectory, s: Scenario, gamma: float) -> float:
    """Aggregate constraint: max over all stage-constraint entries and J_N - gamma.

    This is the scalar whose non-positivity certifies feasibility of the
    scenario at the given cost bound; the max is exact (no smoothing).
    """
    G = stage_constraint_values(ocp, traj, s)
    J = total_cost(ocp, traj, s)
    g_part = float(np.max(G)) if G.size else -np.inf
    return max(g_part, J - gamma)


def g_max_finite(ocp: RobustOcp, p: PolicyPoint, H: Sequence[Scenario]):
    """Max of aggregate_G over a finite scenario set.

    Returns ``(value, argmax_index)``; ties break toward the lowest index so
    the result is deterministic for duplicated scenarios.
    """
    if len(H) == 0:
        raise ContractViolation("scenario set must be non-empty")
    best = -np.inf
    best_i = 0
    for i, s in enumerate(H):
        traj, J, G = evaluate(ocp, p, s)
        g_part = float(np.max(G)) if G.size else -np.inf
        val = max(g_part, J - p.gamma)
        if val > best:
            best, best_i = val, i
    return best, best_i


def dynamics_residual(ocp: RobustOcp, traj: Trajectory, p: PolicyPoint, s: Scenario) -> float:
    """Max-norm defect of the recursion x_{k+1} = step(k, x_k, u_k, w_k, d).

    Zero (to round-off) for shooting models; for implicitly stepped models it
    reports the Newton residual of each step.
    """
    worst = 0.0
    for k in range(ocp.horizon):
        pred = ocp.step(k, traj.x[k], traj.u[k], s.w[k], s.d)
        worst = max(worst, float(np.max(np.abs(pred - traj.x[k + 1]), initial=0.0)))
    return worst
