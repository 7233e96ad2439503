"""Benchmark model zoo."""

from .linear_zoo import (
    BUILDING_A,
    BUILDING_B,
    BUILDING_SAT,
    BUILDING_W,
    UNSTABLE_SAT,
    BuildingCase,
    building_day_mask,
    building_t_min,
    make_building,
    make_scalar_parametric,
    make_unstable,
)
from .saturation import SaturationParams, smooth_sat, smooth_sat_deriv


def make_compressor(params_file=None, N=200, dt=0.5):
    from .compressor import make_compressor as _make

    return _make(params_file=params_file, N=N, dt=dt)


__all__ = [
    "BuildingCase",
    "SaturationParams",
    "building_day_mask",
    "building_t_min",
    "make_building",
    "make_compressor",
    "make_scalar_parametric",
    "make_unstable",
    "smooth_sat",
    "smooth_sat_deriv",
]
