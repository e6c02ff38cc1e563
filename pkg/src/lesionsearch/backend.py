"""Kernel backend selection.

The hot per-voxel loops (separable blur, Hessian stencils, eigenvalue and
vesselness-response fields) exist twice: a numba ``@njit`` implementation and
a vectorized pure-numpy fallback that computes the same quantities. Which one
runs is decided once at import from the ``LESIONSEARCH_NUMBA`` environment
variable:

    LESIONSEARCH_NUMBA=1   require numba (raise if it cannot be imported)
    LESIONSEARCH_NUMBA=0   force the pure-numpy path
    unset                  use numba when importable, numpy otherwise

Tests and the backend benchmark can flip the choice at runtime through
``force_backend``; everything downstream asks ``active_backend()`` per call,
so no caller caches a stale decision.
"""

from __future__ import annotations

import os

_TRUTHY = {"1", "true", "on", "yes"}
_FALSY = {"0", "false", "off", "no"}

_ENV_VAR = "LESIONSEARCH_NUMBA"


def _numba_importable() -> bool:
    try:
        import numba  # noqa: F401
    except Exception:
        return False
    return True


def _decide_from_env() -> str:
    raw = os.environ.get(_ENV_VAR, "").strip().lower()
    if raw in _FALSY:
        return "numpy"
    if raw in _TRUTHY:
        if not _numba_importable():
            raise ImportError(
                f"{_ENV_VAR}={raw!r} requires numba, which failed to import"
            )
        return "numba"
    if raw:
        raise ValueError(f"unrecognized {_ENV_VAR} value: {raw!r}")
    return "numba" if _numba_importable() else "numpy"


_active = _decide_from_env()


def active_backend() -> str:
    """Name of the kernel backend in use: ``"numba"`` or ``"numpy"``."""
    return _active


def force_backend(name: str | None) -> str:
    """Override the backend at runtime.

    ``name`` is ``"numba"``, ``"numpy"``, or None to re-read the environment.
    Returns the backend now active.
    """
    global _active
    if name is None:
        _active = _decide_from_env()
    elif name == "numpy":
        _active = "numpy"
    elif name == "numba":
        if not _numba_importable():
            raise ImportError("numba backend requested but numba is not importable")
        _active = "numba"
    else:
        raise ValueError(f"unknown backend {name!r}")
    return _active
