"""Centrifugal-compressor flow-control benchmark.

Five physical states (suction/discharge pressure, flow, shaft speed, recycle
flow) plus the PI error integral, stepped by implicit trapezoid at dt = 0.5 s
over t_f = 100 s.  Decision variables are the PI gains (K_p, K_i); the drive
torque is saturated to [0, ~1018] N m by the shared smooth saturation shape.
Nine constant uncertainties: +-5% multipliers on the three valve gains and
+-2% multipliers on the six pressure-map coefficients.

Plant constants live in ``compressor.params`` (flat key = value text, see the
comments there for provenance); pass ``params_file`` to substitute a custom
plant.
"""

from __future__ import annotations

import importlib.resources
from pathlib import Path

import numpy as np

from ..kernels import make_compressor_kernel
from ..kernels.compressor_py import CompressorParams
from ..ocp import DecisionBox, RobustOcp, UncertaintyBox

GAIN_REL = 0.05  # valve-gain multipliers in [1 - 5%, 1 + 5%]
ALPHA_REL = 0.02  # map-coefficient multipliers in [1 - 2%, 1 + 2%]


def parse_params_text(text: str) -> dict:
    """Parse the flat key = value format (comments start with #)."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValueError(f"malformed parameter line {lineno}: {line!r}")
        key, _, val = stripped.partition("=")
        out[key.strip()] = float(val.strip())
    return out


def load_params(params_file=None) -> CompressorParams:
    if params_file is None:
        text = (
            importlib.resources.files("robocp.models")
            .joinpath("compressor.params")
            .read_text(encoding="utf-8")
        )
    else:
        text = Path(params_file).read_text(encoding="utf-8")
    kv = parse_params_text(text)
    version = int(kv.pop("schema_version", 1))
    if version != 1:
        raise ValueError(f"unsupported compressor parameter schema {version}")
    alpha = tuple(kv.pop(f"alpha{i}") for i in range(6))
    x0 = tuple(kv.pop(f"x0_{name}") for name in ("p_s", "p_d", "m", "omega", "m_r", "e"))
    return CompressorParams(alpha=alpha, x0=x0, **kv)


def make_compressor(params_file=None, N: int = 200, dt: float = 0.5) -> RobustOcp:
    params = load_params(params_file)
    kernel = make_compressor_kernel(params, N, dt)
    # reference kernel used by the generic callables (always the Python one,
    # so the fast path has an independent implementation to be checked against)
    from ..kernels.compressor_py import CompressorKernelPy

    ref = CompressorKernelPy(params, N, dt)

    n_d = 9
    d_lower = np.concatenate([np.full(3, 1.0 - GAIN_REL), np.full(6, 1.0 - ALPHA_REL)])
    d_upper = np.concatenate([np.full(3, 1.0 + GAIN_REL), np.full(6, 1.0 + ALPHA_REL)])
    box = UncertaintyBox(
        w_lower=np.zeros((N, 0)),
        w_upper=np.zeros((N, 0)),
        d_lower=d_lower,
        d_upper=d_upper,
    )
    dbox = DecisionBox(
        q_lower=np.zeros(0),
        q_upper=np.zeros(0),
        r_lower=np.array([0.0, 0.05]),
        r_upper=np.array([100.0, 20.0]),
        gamma_lower=0.0,
        gamma_upper=1e8,
    )

    def initial_state(d):
        return np.array(params.x0, dtype=float)

    def step(k, x, u, w_k, d):
        return ref.step_implicit(np.asarray(x, float), float(u[0]), d, k)

    def policy(k, x_hist, q, r):
        tau, _ = ref.control(x_hist[k], r)
        return np.array([tau])

    h0 = 0.5 * dt

    def stage_cost(k, x, u, w_k, d):
        h = h0 if k == 0 else dt
        return h * ref.running_cost(np.asarray(x, float))

    def terminal_cost(x_N, w_last, d):
        return h0 * ref.running_cost(np.asarray(x_N, float))

    def stage_constraints(k, x, u, w_k, d):
        m, om = x[2], x[3]
        return np.array(
            [m - ref.M_MAX, ref.M_MIN - m, om - ref.W_MAX, ref.W_MIN - om]
        )

    return RobustOcp(
        name="compressor",
        horizon=N,
        n_x=6,
        n_u=1,
        n_w=0,
        n_d=n_d,
        n_g=4,
        n_q=0,
        n_r=2,
        initial_state=initial_state,
        step=step,
        policy=policy,
        stage_cost=stage_cost,
        terminal_cost=terminal_cost,
        stage_constraints=stage_constraints,
        uncertainty=box,
        decision_box=dbox,
        kernel=kernel,
        constraint_labels=("flow_upper", "flow_lower", "speed_upper", "speed_lower"),
        meta={"dt": dt, "t_f": N * dt, "m_d": params.m_d},
    )
