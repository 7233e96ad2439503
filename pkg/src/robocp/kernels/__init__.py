"""Kernel backend selection: compiled extension when available, numpy otherwise.

``make_linear_kernel`` / ``make_compressor_kernel`` hand back the fastest
available implementation of the fused simulate/outputs/adjoint contract.
``HAVE_NATIVE`` reports whether the compiled extension loaded; the
ROBOCP_FORCE_PYTHON environment variable pins the fallback (used by the
parity tests and the benchmark).
"""

from __future__ import annotations

import os

from .pykernels import LinearKernelPy

try:  # pragma: no cover - exercised indirectly via HAVE_NATIVE paths
    from . import _native

    HAVE_NATIVE = True
except ImportError:  # extension not built; numpy fallback takes over
    _native = None
    HAVE_NATIVE = False


def _use_native():
    return HAVE_NATIVE and not os.environ.get("ROBOCP_FORCE_PYTHON")


def make_linear_kernel(family, force_python: bool = False):
    if not force_python and _use_native():
        return _native.LinearKernelNative(family)
    return LinearKernelPy(family)


def make_compressor_kernel(params, horizon, dt, force_python: bool = False):
    from .compressor_py import CompressorKernelPy

    if not force_python and _use_native():
        return _native.CompressorKernelNative(params, horizon, dt)
    return CompressorKernelPy(params, horizon, dt)
