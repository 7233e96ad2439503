"""Smooth saturation u_sat = beta0 / (beta1 + exp(beta2*u)) + beta3.

All zoo models share this shape to keep the closed loop continuously
differentiable.  Evaluation is overflow-safe: the exponential is always taken
of a non-positive argument, so large |beta2*u| lands exactly on the
asymptotic limits instead of overflowing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SaturationParams:
    beta0: float
    beta1: float
    beta2: float
    beta3: float

    def __post_init__(self):
        if self.beta1 <= 0:
            raise ValueError("beta1 must be positive to keep the denominator nonzero")

    def limits(self):
        """(limit as u -> -inf, limit as u -> +inf). Not sorted."""
        return self.beta0 / self.beta1 + self.beta3, self.beta3


def smooth_sat(u, params: SaturationParams):
    """Evaluate the saturation; accepts scalars or arrays."""
    b0, b1, b2, b3 = params.beta0, params.beta1, params.beta2, params.beta3
    t = b2 * np.asarray(u, dtype=float)
    # For t >= 0 rewrite with exp(-t) so the exponential never overflows.
    z = np.exp(-np.abs(t))
    pos = b0 * z / (b1 * z + 1.0) + b3
    neg = b0 / (b1 + z) + b3
    out = np.where(t >= 0, pos, neg)
    return float(out) if np.ndim(u) == 0 else out


def smooth_sat_deriv(u, params: SaturationParams):
    """d(smooth_sat)/du, with the same overflow-safe range reduction."""
    b0, b1, b2 = params.beta0, params.beta1, params.beta2
    t = b2 * np.asarray(u, dtype=float)
    z = np.exp(-np.abs(t))
    pos = -b0 * b2 * z / (b1 * z + 1.0) ** 2
    neg = -b0 * b2 * z / (b1 + z) ** 2
    out = np.where(t >= 0, pos, neg)
    return float(out) if np.ndim(u) == 0 else out


def smooth_sat_scalar(u: float, b0: float, b1: float, b2: float, b3: float) -> float:
    """Scalar fast path used by the numpy kernels (no array dispatch)."""
    t = b2 * u
    if t >= 0.0:
        z = math.exp(-t)
        return b0 * z / (b1 * z + 1.0) + b3
    z = math.exp(t)
    return b0 / (b1 + z) + b3
