"""Benchmark models with linear dynamics.

Three systems, all instances of the affine-parametric family in
:mod:`robocp.linsys`:

* a scalar system with an additive parametric perturbation of the pole,
  whose worst case sits strictly inside the uncertainty interval;
* a scalar open-loop-unstable system (growth rate 2.1*d) with state bounds
  [0, 1] and a smoothly saturated affine controller;
* a three-state single-zone building (indoor / wall / corridor temperature)
  with multiplicative uncertainty on every A and B entry, uncertain wall and
  corridor initial temperatures, three time-varying disturbances with
  day/night ranges, and a day/night comfort band on the indoor temperature.
"""

from __future__ import annotations

import enum

import numpy as np

from ..linsys import LinearFamily, build_linear_ocp
from ..ocp import DecisionBox, PolicyPoint, UncertaintyBox
from .saturation import SaturationParams

UNSTABLE_SAT = SaturationParams(beta0=-2.0229, beta1=1.0, beta2=1.2963, beta3=1.01145)
BUILDING_SAT = SaturationParams(beta0=-5030.0, beta1=2.937, beta2=0.003, beta3=1207.0)

BUILDING_A = np.array(
    [
        [0.8511, 0.0541, 0.0707],
        [0.1293, 0.8635, 0.0055],
        [0.0989, 0.0032, 0.7541],
    ]
)
BUILDING_B = 1e-3 * np.array([[3.5], [0.3], [0.2]])
BUILDING_W = 1e-3 * np.array(
    [
        [22.217, 1.7912, 42.2123],
        [1.5376, 0.6944, 2.29214],
        [103.1813, 0.1032, 196.0444],
    ]
)

BUILDING_T_MAX = 26.0
BUILDING_T_MIN_DAY = 23.0
BUILDING_T_MIN_NIGHT = 17.0
BUILDING_STEPS_PER_HOUR = 4  # 15-minute sampling

# (low, high) disturbance ranges: internal heat gain, solar radiation,
# external temperature.
BUILDING_W_DAY = np.array([[4.0, 6.0], [4.0, 6.0], [6.0, 8.0]])
BUILDING_W_NIGHT = np.array([[0.0, 2.0], [0.0, 0.0], [2.0, 4.0]])


class BuildingCase(enum.Enum):
    """Parametric-uncertainty range for the building multipliers."""

    A = (0.98, 1.02)
    B = (0.96, 1.03)


def make_scalar_parametric():
    """Scalar system x+ = (-0.5 + d)x + u with constraint x_k <= 0.

    Horizon 5, open-loop inputs (n_r = 0), d in [-0.5, 0.5].  The stage
    constraint is written through the step map (g_k = x_{k+1}), so the last
    stage is a quartic polynomial in d whose maximizer is interior.  Returns
    the problem together with the fixed reference input sequence
    (-1, 1, -1, -1, 1) as a :class:`PolicyPoint`.
    """
    N = 5
    fam = LinearFamily(
        horizon=N,
        A0=np.array([[-0.5]]),
        dA=np.array([[[1.0]]]),
        B0=np.array([[1.0]]),
        dB=np.zeros((1, 1, 1)),
        W=np.zeros((1, 0)),
        x0_base=np.zeros(1),
        dx0=np.zeros((1, 1)),
        feedback_mask=np.zeros((1, 1), dtype=int),
        sat=None,
        cost_scale=1.0,
        Cx=np.zeros((1, 1)),
        Cxn=np.array([[1.0]]),
        Cu=np.zeros((1, 1)),
        g_offset=np.zeros((N, 1)),
    )
    box = UncertaintyBox(
        w_lower=np.zeros((N, 0)),
        w_upper=np.zeros((N, 0)),
        d_lower=np.array([-0.5]),
        d_upper=np.array([0.5]),
    )
    dbox = DecisionBox(
        q_lower=-2.0 * np.ones(N),
        q_upper=2.0 * np.ones(N),
        r_lower=np.zeros(0),
        r_upper=np.zeros(0),
        gamma_lower=0.0,
        gamma_upper=50.0,
    )
    ocp = build_linear_ocp(
        "scalar-parametric",
        fam,
        box,
        dbox,
        cost_independent_of_uncertainty=True,
        constraint_labels=("x_next_upper",),
    )
    reference = PolicyPoint(q=np.array([-1.0, 1.0, -1.0, -1.0, 1.0]), r=np.zeros(0), gamma=5.0)
    return ocp, reference


def make_unstable(N: int = 10):
    """Open-loop unstable scalar system x+ = 2.1*d*x + u, d in [0.9, 1.1].

    State must stay in [0, 1] at every stage; the input is u = sat(K x + q_k)
    with the smooth +-1 saturation.  Cost is sum of squared applied inputs.
    """
    if N < 2:
        raise ValueError("horizon must be at least 2")
    fam = LinearFamily(
        horizon=N,
        A0=np.zeros((1, 1)),
        dA=np.array([[[2.1]]]),
        B0=np.array([[1.0]]),
        dB=np.zeros((1, 1, 1)),
        W=np.zeros((1, 0)),
        x0_base=np.array([0.5]),
        dx0=np.zeros((1, 1)),
        feedback_mask=np.ones((1, 1), dtype=int),
        sat=UNSTABLE_SAT,
        cost_scale=1.0,
        Cx=np.array([[1.0], [-1.0]]),
        Cxn=np.zeros((2, 1)),
        Cu=np.zeros((2, 1)),
        g_offset=np.tile(np.array([-1.0, 0.0]), (N, 1)),
    )
    box = UncertaintyBox(
        w_lower=np.zeros((N, 0)),
        w_upper=np.zeros((N, 0)),
        d_lower=np.array([0.9]),
        d_upper=np.array([1.1]),
    )
    # Feedback gain capped at |K| <= 2: u spans the full +-1 authority across
    # the admissible state box [0, 1] twice over, and wider gains only add
    # redundant (q, K) combinations along the saturation plateaus.
    dbox = DecisionBox(
        q_lower=-5.0 * np.ones(N),
        q_upper=5.0 * np.ones(N),
        r_lower=np.array([-2.0]),
        r_upper=np.array([2.0]),
        gamma_lower=0.0,
        gamma_upper=1.1 * N,
    )
    return build_linear_ocp(
        "unstable",
        fam,
        box,
        dbox,
        constraint_labels=("x_upper", "x_lower"),
        meta={"a": 2.1},
    )


def building_day_mask(N: int) -> np.ndarray:
    """True where the step falls in daytime; horizon starts 6:00 am, day lasts 12 h."""
    hours_from_start = 0.25 * np.arange(N)
    return (hours_from_start % 24.0) < 12.0


def building_t_min(N: int) -> np.ndarray:
    return np.where(building_day_mask(N), BUILDING_T_MIN_DAY, BUILDING_T_MIN_NIGHT)


def _building_w_bounds(N: int):
    day = building_day_mask(N)
    lo = np.where(day[:, None], BUILDING_W_DAY[:, 0], BUILDING_W_NIGHT[:, 0])
    hi = np.where(day[:, None], BUILDING_W_DAY[:, 1], BUILDING_W_NIGHT[:, 1])
    return lo, hi


def make_building(case: BuildingCase = BuildingCase.A, N: int = 192):
    """Single-zone building comfort problem over N 15-minute steps (default 48 h).

    Fourteen constant uncertainties: multipliers on the nine A entries and
    three B entries (range per ``case``) plus additive perturbations of the
    wall and corridor initial temperatures in [-0.5, 0.5] degC.  Three
    disturbances (internal gain, solar, external temperature) vary per step
    inside day/night boxes.  Controller u = sat(K * x_temp + q_k), saturation
    approximating [-500, 1200] W; cost (1/N) sum u_k^2.
    """
    case = BuildingCase(case)
    n_d = 14
    dA = np.zeros((n_d, 3, 3))
    for idx in range(9):
        i, j = divmod(idx, 3)
        dA[idx, i, j] = BUILDING_A[i, j]
    dB = np.zeros((n_d, 3, 1))
    for j in range(3):
        dB[9 + j, j, 0] = BUILDING_B[j, 0]
    dx0 = np.zeros((n_d, 3))
    dx0[12, 1] = 1.0
    dx0[13, 2] = 1.0

    t_min = building_t_min(N)
    g_offset = np.stack([-BUILDING_T_MAX * np.ones(N), t_min], axis=1)
    fam = LinearFamily(
        horizon=N,
        A0=np.zeros((3, 3)),
        dA=dA,
        B0=np.zeros((3, 1)),
        dB=dB,
        W=BUILDING_W.copy(),
        x0_base=np.array([25.0, 24.0, 24.0]),
        dx0=dx0,
        feedback_mask=np.array([[1, 0, 0]]),
        sat=BUILDING_SAT,
        cost_scale=1.0 / N,
        Cx=np.array([[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
        Cxn=np.zeros((2, 3)),
        Cu=np.zeros((2, 1)),
        g_offset=g_offset,
    )
    mult_lo, mult_hi = case.value
    d_lower = np.concatenate([mult_lo * np.ones(12), [-0.5, -0.5]])
    d_upper = np.concatenate([mult_hi * np.ones(12), [0.5, 0.5]])
    w_lower, w_upper = _building_w_bounds(N)
    box = UncertaintyBox(w_lower=w_lower, w_upper=w_upper, d_lower=d_lower, d_upper=d_upper)
    dbox = DecisionBox(
        q_lower=-3000.0 * np.ones(N),
        q_upper=3000.0 * np.ones(N),
        r_lower=np.array([-400.0]),
        r_upper=np.array([400.0]),
        gamma_lower=0.0,
        gamma_upper=2e6,
    )
    return build_linear_ocp(
        f"building-{case.name}",
        fam,
        box,
        dbox,
        constraint_labels=("temp_upper", "temp_lower"),
        meta={"case": case.name, "steps_per_hour": BUILDING_STEPS_PER_HOUR},
    )
