"""Kernel backend selection.

The compiled extension is used when importable; set ``ETHCAST_KERNELS=python``
to force the NumPy fallback. The compiled core carries a portable build and,
on x86, an AVX2/FMA build picked at import; ``ETHCAST_SIMD=portable`` pins the
portable one. The two builds agree to rounding, not bitwise.
"""

import os

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_FORCED = os.environ.get("ETHCAST_KERNELS", "").strip().lower()

_SIMD = os.environ.get("ETHCAST_SIMD", "").strip().lower()
if _ckernels is not None and _SIMD:
    _ckernels.set_simd(_SIMD)

if _ckernels is not None and _FORCED not in ("python", "numpy", "py"):
    kernels = _ckernels
    BACKEND = "compiled"
else:
    kernels = _pykernels
    BACKEND = "python"


def available_backends():
    """Names of backends that can be selected in this process."""
    names = ["python"]
    if _ckernels is not None:
        names.insert(0, "compiled")
    return names


def get_kernels(name=None):
    """Return the kernel module for ``name`` (default: the active one)."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")


def describe():
    """One-line description of the active backend, for logs and benchmarks."""
    if kernels is _ckernels:
        return f"compiled ({_ckernels.get_simd()})"
    return "python (numpy)"
