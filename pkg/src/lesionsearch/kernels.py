"""Dispatch layer for the hot per-voxel kernels.

Every function here has two interchangeable implementations: a numba
``@njit`` version in ``_nb_kernels`` and a vectorized numpy version in
``_np_kernels``. The active one is chosen per call via
``backend.active_backend()`` (see that module for the env flag). Both
paths share the same sampled-Gaussian weights and the same formulas, so
they agree to floating-point roundoff.

Conventions: volumes are C-contiguous float64 arrays shaped
(depth, height, width); x runs along width, y along height, z along depth.
Borders are handled by mirror reflection without edge duplication
(numpy ``pad(mode="reflect")``).
"""

from __future__ import annotations

import math

import numpy as np

from . import backend
from . import _np_kernels


def _nb():
    from . import _nb_kernels

    return _nb_kernels


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled, normalized 1D Gaussian with radius ceil(3*sigma)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1, dtype=np.float64)
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    kern = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return kern / kern.sum()


def gaussian_blur_volume(vol: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur over x, y (and z when depth > 1); sigma=0 copies."""
    kern = gaussian_kernel1d(sigma)
    vol = np.ascontiguousarray(vol, dtype=np.float64)
    if kern.size == 1:
        return vol.copy()
    blur_z = vol.shape[0] > 1
    if backend.active_backend() == "numba":
        return _nb().blur_volume(vol, kern, blur_z)
    return _np_kernels.blur_volume(vol, kern, blur_z)


def second_derivs_2d(plane: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Central-difference (ixx, ixy, iyy) of a 2D plane, mirrored borders."""
    plane = np.ascontiguousarray(plane, dtype=np.float64)
    if backend.active_backend() == "numba":
        return _nb().second_derivs_2d(plane)
    return _np_kernels.second_derivs_2d(plane)


def second_derivs_3d(
    vol: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Central-difference (ixx, iyy, izz, ixy, ixz, iyz) of a volume."""
    vol = np.ascontiguousarray(vol, dtype=np.float64)
    if backend.active_backend() == "numba":
        return _nb().second_derivs_3d(vol)
    return _np_kernels.second_derivs_3d(vol)


def response_field_2d(
    ixx: np.ndarray, ixy: np.ndarray, iyy: np.ndarray, beta: float, gamma: float
) -> np.ndarray:
    """Two-eigenvalue structure response of a 2D Hessian field."""
    if backend.active_backend() == "numba":
        return _nb().response_field_2d(ixx, ixy, iyy, beta, gamma)
    return _np_kernels.response_field_2d(ixx, ixy, iyy, beta, gamma)


def response_field_3d(
    ixx: np.ndarray,
    iyy: np.ndarray,
    izz: np.ndarray,
    ixy: np.ndarray,
    ixz: np.ndarray,
    iyz: np.ndarray,
    alpha: float,
    beta: float,
    gamma: float,
    hard_zero: bool,
    soft_suppression: bool,
) -> np.ndarray:
    """Three-eigenvalue structure response of a volumetric Hessian field."""
    if backend.active_backend() == "numba":
        return _nb().response_field_3d(
            ixx, iyy, izz, ixy, ixz, iyz, alpha, beta, gamma, hard_zero, soft_suppression
        )
    return _np_kernels.response_field_3d(
        ixx, iyy, izz, ixy, ixz, iyz, alpha, beta, gamma, hard_zero, soft_suppression
    )
