"""Affine-parametric linear systems with saturated affine state feedback.

Every linear model in the zoo (and user-supplied inline models) is an
instance of the same family:

    x_{k+1} = (A0 + sum_j d_j dA_j) x_k + (B0 + sum_j d_j dB_j) u_k + W w_k
    x_0     = x0_base + dx0^T d
    u_k     = sat(F(r) x_k + q_k)        F(r) fills the masked feedback entries
    J       = cost_scale * sum_k ||u_k||^2
    G[k]    = Cx x_k + Cxn x_{k+1} + Cu u_k + g_offset[k]     (<= 0 feasible)

The ``Cxn`` term lets a stage constraint reach through the step map to the
next state, which is how a bound on the final state is expressed without a
separate terminal constraint.  The family description is consumed both by the
generic callable path in :mod:`robocp.ocp` and by the fused kernels in
:mod:`robocp.kernels`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models.saturation import SaturationParams, smooth_sat, smooth_sat_deriv
from .ocp import DecisionBox, RobustOcp, UncertaintyBox


@dataclass(frozen=True)
class LinearFamily:
    """Data of one affine-parametric linear model (shapes as documented above)."""

    horizon: int
    A0: np.ndarray
    dA: np.ndarray
    B0: np.ndarray
    dB: np.ndarray
    W: np.ndarray
    x0_base: np.ndarray
    dx0: np.ndarray
    feedback_mask: np.ndarray
    sat: Optional[SaturationParams]
    cost_scale: float
    Cx: np.ndarray
    Cxn: np.ndarray
    Cu: np.ndarray
    g_offset: np.ndarray

    def __post_init__(self):
        n_x = self.A0.shape[0]
        n_u = self.B0.shape[1]
        n_d = self.dA.shape[0]
        assert self.A0.shape == (n_x, n_x)
        assert self.dA.shape == (n_d, n_x, n_x)
        assert self.B0.shape == (n_x, n_u)
        assert self.dB.shape == (n_d, n_x, n_u)
        assert self.W.shape[0] == n_x
        assert self.x0_base.shape == (n_x,)
        assert self.dx0.shape == (n_d, n_x)
        assert self.feedback_mask.shape == (n_u, n_x)
        n_g = self.Cx.shape[0]
        assert self.Cxn.shape == (n_g, n_x) and self.Cu.shape == (n_g, n_u)
        assert self.g_offset.shape == (self.horizon, n_g)

    @property
    def n_x(self):
        return self.A0.shape[0]

    @property
    def n_u(self):
        return self.B0.shape[1]

    @property
    def n_w(self):
        return self.W.shape[1]

    @property
    def n_d(self):
        return self.dA.shape[0]

    @property
    def n_g(self):
        return self.Cx.shape[0]

    @property
    def n_q(self):
        return self.horizon * self.n_u

    @property
    def n_r(self):
        return int(self.feedback_mask.sum())

    def A_of(self, d):
        return self.A0 + np.einsum("j,jab->ab", d, self.dA) if self.n_d else self.A0

    def B_of(self, d):
        return self.B0 + np.einsum("j,jab->ab", d, self.dB) if self.n_d else self.B0

    def feedback_matrix(self, r):
        F = np.zeros((self.n_u, self.n_x))
        F[self.feedback_mask.astype(bool)] = r
        return F

    def saturate(self, v):
        return smooth_sat(v, self.sat) if self.sat is not None else v

    def saturate_deriv(self, v):
        return smooth_sat_deriv(v, self.sat) if self.sat is not None else np.ones_like(v)


def build_linear_ocp(
    name: str,
    family: LinearFamily,
    uncertainty: UncertaintyBox,
    decision_box: DecisionBox,
    cost_independent_of_uncertainty: bool = False,
    constraint_labels=(),
    meta=None,
) -> RobustOcp:
    """Assemble a :class:`RobustOcp` (generic callables + fast kernel) from a family."""
    from .kernels import make_linear_kernel

    fam = family
    n_u = fam.n_u

    def initial_state(d):
        return fam.x0_base + (d @ fam.dx0 if fam.n_d else 0.0)

    def step(k, x, u, w_k, d):
        x_next = fam.A_of(d) @ x + fam.B_of(d) @ u
        if fam.n_w:
            x_next = x_next + fam.W @ w_k
        return x_next

    def policy(k, x_hist, q, r):
        v = fam.feedback_matrix(r) @ x_hist[k] + q[k * n_u : (k + 1) * n_u]
        return np.atleast_1d(fam.saturate(v))

    def stage_cost(k, x, u, w_k, d):
        return fam.cost_scale * float(u @ u)

    def terminal_cost(x_N, w_last, d):
        return 0.0

    def stage_constraints(k, x, u, w_k, d):
        vals = fam.Cx @ x + fam.Cu @ u + fam.g_offset[k]
        if np.any(fam.Cxn):
            vals = vals + fam.Cxn @ step(k, x, u, w_k, d)
        return vals

    return RobustOcp(
        name=name,
        horizon=fam.horizon,
        n_x=fam.n_x,
        n_u=fam.n_u,
        n_w=fam.n_w,
        n_d=fam.n_d,
        n_g=fam.n_g,
        n_q=fam.n_q,
        n_r=fam.n_r,
        initial_state=initial_state,
        step=step,
        policy=policy,
        stage_cost=stage_cost,
        terminal_cost=terminal_cost,
        stage_constraints=stage_constraints,
        uncertainty=uncertainty,
        decision_box=decision_box,
        kernel=make_linear_kernel(fam),
        cost_independent_of_uncertainty=cost_independent_of_uncertainty,
        constraint_labels=tuple(constraint_labels),
        meta=dict(meta or {}),
    )
