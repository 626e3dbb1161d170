"""Kernel backend selection.

The compiled extension implements the hot per-point kernels; the NumPy
reference implementation is selected when the extension is missing (or
when HESSIANLAB_BACKEND=python is set).  Both expose the same surface
and agree to rounding; `benchmarks/bench_kernels.py` compares them.
"""

import os

from . import reference
from .reference import pack_hermitian, unpack_hermitian

_FORCED = os.environ.get("HESSIANLAB_BACKEND", "").lower()

if _FORCED in ("", "compiled"):
    try:
        from . import _core

        BACKEND = "compiled"
    except ImportError:
        if _FORCED == "compiled":
            raise
        _core = None
        BACKEND = "python"
else:
    _core = None
    BACKEND = "python"


def get_backend(name=None):
    """Return the kernel module for `name` ('compiled'/'python'/None=current)."""
    if name in (None, ""):
        return _core if BACKEND == "compiled" else reference
    if name == "python":
        return reference
    if name == "compiled":
        if _core is None:
            raise ImportError("compiled kernel backend is not available")
        return _core
    raise ValueError(f"unknown backend {name!r}")


def ddc(values, h):
    return get_backend().ddc(values, h)


def sigma_all(P):
    return get_backend().sigma_all(P)


def newton_tensor(P, k):
    return get_backend().newton_tensor(P, k)


def hess_directional(P, delta, h, k):
    return get_backend().hess_directional(P, delta, h, k)


def mean_tensor_over_sigma(P, k):
    return get_backend().mean_tensor_over_sigma(P, k)


def sweep_envelope(phi, obstacle, omega, k, h, max_sweeps, tol):
    return get_backend().sweep_envelope(phi, obstacle, omega, k, h, max_sweeps, tol)
