"""Kernel backend selection.

The hot kernels (3D/2D convolution, surfel rasterization) exist twice: a
numba ``@njit`` implementation and a pure-numpy fallback.  The default is
chosen once at import time from the ``VOXSPLAT_BACKEND`` environment
variable (``"numba"`` or ``"numpy"``); most kernel entry points also take
an explicit ``backend=`` argument so tests and benchmarks can compare the
two paths directly.
"""

from __future__ import annotations

import os
import warnings

_ENV_VAR = "VOXSPLAT_BACKEND"
_VALID = ("numba", "numpy")


def _probe_numba() -> bool:
    try:
        import numba  # noqa: F401

        return True
    except Exception:
        return False


def _resolve_default() -> str:
    requested = os.environ.get(_ENV_VAR, "").strip().lower()
    if requested and requested not in _VALID:
        warnings.warn(
            f"{_ENV_VAR}={requested!r} is not one of {_VALID}; falling back to auto",
            stacklevel=2,
        )
        requested = ""
    if requested == "numpy":
        return "numpy"
    if requested == "numba":
        if _probe_numba():
            return "numba"
        warnings.warn(f"{_ENV_VAR}=numba but numba is not importable; using numpy", stacklevel=2)
        return "numpy"
    return "numba" if _probe_numba() else "numpy"


DEFAULT_BACKEND = _resolve_default()


def resolve(backend: str | None) -> str:
    """Return the effective backend name for an optional per-call override."""
    if backend is None:
        return DEFAULT_BACKEND
    if backend not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {backend!r}")
    if backend == "numba" and not _probe_numba():
        raise RuntimeError("numba backend requested but numba is not importable")
    return backend
