"""A-posteriori guarantees: similarity-induced violation bounds and
volumetric probability bounds on constraint-violation thresholds.

The similarity bound caps how much the stage constraints can differ between
two scenarios within squared distances (eps_w*, eps_d*) of each other, given
a local Lipschitz constant L of the constraint map and a trajectory norm
bound sigma_z.  The volumetric bounds treat the constraint values of the
collected scenarios as delta-ball centers in the (normalised) constraint
range and bound the probability that a fresh scenario lands outside all
balls, which also yields a minimal scenario count for a desired violation
probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .ocp import ContractViolation, PolicyPoint, RobustOcp, Scenario, evaluate


@dataclass(frozen=True)
class BoundInputs:
    """Bag of constants used by the bound calculators (all optional per use)."""

    L: float = 0.0
    sigma_z: float = 0.0
    eps_w_star: float = 0.0
    eps_d_star: float = 0.0
    n_g: int = 1
    delta: float = 0.0
    omega_k: float = 1.0
    H_delta: int = 1
    p_des: float = 0.0

    def __post_init__(self):
        if min(self.L, self.sigma_z, self.delta, self.omega_k) < 0:
            raise ValueError("L, sigma_z, delta, omega_k must be non-negative")
        if not 0 <= self.p_des <= 1:
            raise ValueError("p_des must lie in [0, 1]")
        if self.n_g < 1:
            raise ValueError("n_g must be a positive integer")


def violation_bound(L: float, eps_w_star: float, eps_d_star: float, sigma_z: float) -> float:
    """Worst squared constraint difference between eps-close scenarios:
    L^2 * (eps_w* + eps_d* + 4 sigma_z^2)."""
    if min(L, eps_w_star, eps_d_star, sigma_z) < 0:
        raise ValueError("inputs must be non-negative")
    return L * L * (eps_w_star + eps_d_star + 4.0 * sigma_z * sigma_z)


def set_violation_bound(L: float, sigma_z: float, H_set: Sequence[Scenario], s_star: Scenario) -> float:
    """Bound for a scenario outside the set: distances are maximised over members,
    each component independently."""
    if not H_set:
        raise ContractViolation("scenario set must be non-empty")
    eps_w = 0.0
    eps_d = 0.0
    for s in H_set:
        if s.w.shape != s_star.w.shape or s.d.shape != s_star.d.shape:
            raise ContractViolation("scenario dimension mismatch")
        eps_w = max(eps_w, float(np.sum((s.w - s_star.w) ** 2)))
        eps_d = max(eps_d, float(np.sum((s.d - s_star.d) ** 2)))
    return violation_bound(L, eps_w, eps_d, sigma_z)


def kappa(n_g: int) -> float:
    """Unit-ball volume coefficient pi^(n/2) / Gamma(n/2 + 1)."""
    if n_g < 1:
        raise ValueError("n_g must be >= 1")
    return math.pi ** (n_g / 2.0) / math.gamma(n_g / 2.0 + 1.0)


def ball_volume(n_g: int, delta: float) -> float:
    """Volume of the n_g-dimensional ball of radius delta."""
    if delta < 0:
        raise ValueError("delta must be non-negative")
    return kappa(n_g) * delta**n_g


def violation_probability_bounds(n_g: int, delta: float, H_delta: int, omega_k: float = 1.0):
    """(lower, upper) bounds on P(constraint value outside all delta-balls).

    Returns ``(lower, upper, clamped)``; probabilities are clamped to [0, 1]
    and ``clamped`` flags that the ball volumes exceeded the range volume, in
    which case the raw lower bound was vacuous.
    """
    if omega_k <= 0:
        raise ValueError("omega_k must be positive")
    if H_delta < 1:
        raise ValueError("H_delta must be >= 1")
    vol1 = ball_volume(n_g, delta) / omega_k
    raw_lower = 1.0 - H_delta * vol1
    raw_upper = 1.0 - vol1
    clamped = raw_lower < 0.0 or raw_upper < 0.0 or raw_upper > 1.0
    lower = min(max(raw_lower, 0.0), 1.0)
    upper = min(max(raw_upper, 0.0), 1.0)
    return lower, upper, clamped


def min_scenarios(p_des: float, delta: float, n_g: int) -> int:
    """Smallest scenario count with violation probability at most p_des:
    ceil((1 - p_des) / (kappa * delta^n_g)), floored at 1."""
    if not 0 <= p_des <= 1:
        raise ValueError("p_des must lie in [0, 1]")
    if delta <= 0:
        raise ValueError("delta must be positive (the bound is unbounded at 0)")
    bound = (1.0 - p_des) / (kappa(n_g) * delta**n_g)
    return max(1, int(math.ceil(bound - 1e-12)))


def tradeoff_table(n_g_list: Sequence[int], delta_grid: Sequence[float], p_des: float):
    """Rows (n_g, delta, H_delta) over the grid, n_g outer, delta ascending inner."""
    if not len(n_g_list) or not len(delta_grid):
        raise ValueError("grids must be non-empty")
    rows = []
    for n_g in n_g_list:
        for delta in sorted(delta_grid):
            rows.append((int(n_g), float(delta), min_scenarios(p_des, delta, n_g)))
    return rows


def write_tradeoff_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("n_g,delta,H_delta\n")
        for n_g, delta, H in rows:
            fh.write(f"{n_g},{delta:.17g},{H}\n")


def estimate_constants(
    ocp: RobustOcp,
    p: PolicyPoint,
    n_samples: int,
    rng_seed: int = 0,
    pairs: Optional[int] = None,
):
    """Monte-Carlo lower-bound estimates of (L, sigma_z) for Lipschitz bounds.

    sigma_z_hat is the max sampled trajectory norm ||z||_2; L_hat the max
    difference quotient
    ||g_k(z1,w1,d1) - g_k(z2,w2,d2)|| / ||(z1_k,w1_k,d1) - (z2_k,w2_k,d2)||
    over sampled scenario pairs and stages.  Both are lower bounds on the
    true constants.  Diverged samples are excluded and counted.
    """
    if n_samples < 2:
        raise ContractViolation("need at least two samples")
    rng = np.random.default_rng(rng_seed)
    n_pairs = pairs if pairs is not None else n_samples // 2

    sigma_z = 0.0
    L_hat = 0.0
    excluded = 0
    used = 0

    def sample_eval():
        nonlocal excluded
        while True:
            s = ocp.uncertainty.sample(rng)
            try:
                traj, J, G = evaluate(ocp, p, s)
                return s, traj, G
            except RuntimeError:
                excluded += 1

    for _ in range(n_samples - 2 * n_pairs):
        s, traj, _ = sample_eval()
        sigma_z = max(sigma_z, float(np.linalg.norm(traj.stacked())))
        used += 1

    for _ in range(n_pairs):
        s1, t1, G1 = sample_eval()
        s2, t2, G2 = sample_eval()
        used += 2
        sigma_z = max(
            sigma_z,
            float(np.linalg.norm(t1.stacked())),
            float(np.linalg.norm(t2.stacked())),
        )
        z1 = np.concatenate([t1.x[:-1], t1.u], axis=1)
        z2 = np.concatenate([t2.x[:-1], t2.u], axis=1)
        num = np.linalg.norm(G1 - G2, axis=1)
        dw = s1.w - s2.w if ocp.n_w else np.zeros((ocp.horizon, 0))
        dd2 = float(np.sum((s1.d - s2.d) ** 2))
        den = np.sqrt(np.sum((z1 - z2) ** 2, axis=1) + np.sum(dw**2, axis=1) + dd2)
        ok = den > 1e-14
        if np.any(ok):
            L_hat = max(L_hat, float(np.max(num[ok] / den[ok])))

    return {
        "L_hat": L_hat,
        "sigma_z_hat": sigma_z,
        "samples_used": used,
        "samples_excluded": excluded,
        "pairs": n_pairs,
    }
