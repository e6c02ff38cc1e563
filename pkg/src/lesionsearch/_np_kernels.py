"""Pure-numpy kernel implementations (fallback path, see ``backend``)."""

from __future__ import annotations

import numpy as np

_TWO_PI_THIRDS = 2.0943951023931953  # 2*pi/3


def _blur_axis(arr: np.ndarray, kern: np.ndarray, axis: int) -> np.ndarray:
    if arr.shape[axis] == 1:
        return arr.copy()
    radius = (kern.size - 1) // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (radius, radius)
    padded = np.pad(arr, pad, mode="reflect")
    windows = np.lib.stride_tricks.sliding_window_view(padded, kern.size, axis=axis)
    return windows @ kern


def blur_volume(vol: np.ndarray, kern: np.ndarray, blur_z: bool) -> np.ndarray:
    out = _blur_axis(vol, kern, axis=2)
    out = _blur_axis(out, kern, axis=1)
    if blur_z:
        out = _blur_axis(out, kern, axis=0)
    return out


def _pad1(arr: np.ndarray) -> np.ndarray:
    return np.pad(arr, 1, mode="reflect")


def second_derivs_2d(plane: np.ndarray):
    p = _pad1(plane)
    c = p[1:-1, 1:-1]
    ixx = p[1:-1, 2:] - 2.0 * c + p[1:-1, :-2]
    iyy = p[2:, 1:-1] - 2.0 * c + p[:-2, 1:-1]
    ixy = 0.25 * (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2])
    return ixx, ixy, iyy


def second_derivs_3d(vol: np.ndarray):
    p = _pad1(vol)
    c = p[1:-1, 1:-1, 1:-1]
    ixx = p[1:-1, 1:-1, 2:] - 2.0 * c + p[1:-1, 1:-1, :-2]
    iyy = p[1:-1, 2:, 1:-1] - 2.0 * c + p[1:-1, :-2, 1:-1]
    izz = p[2:, 1:-1, 1:-1] - 2.0 * c + p[:-2, 1:-1, 1:-1]
    ixy = 0.25 * (p[1:-1, 2:, 2:] - p[1:-1, 2:, :-2] - p[1:-1, :-2, 2:] + p[1:-1, :-2, :-2])
    ixz = 0.25 * (p[2:, 1:-1, 2:] - p[2:, 1:-1, :-2] - p[:-2, 1:-1, 2:] + p[:-2, 1:-1, :-2])
    iyz = 0.25 * (p[2:, 2:, 1:-1] - p[2:, :-2, 1:-1] - p[:-2, 2:, 1:-1] + p[:-2, :-2, 1:-1])
    return ixx, iyy, izz, ixy, ixz, iyz


def response_field_2d(ixx, ixy, iyy, beta, gamma):
    mean = 0.5 * (ixx + iyy)
    half_diff = 0.5 * (ixx - iyy)
    disc = np.sqrt(half_diff * half_diff + ixy * ixy)
    ea = mean + disc
    eb = mean - disc
    ea_is_major = np.abs(ea) >= np.abs(eb)
    l2 = np.where(ea_is_major, ea, eb)
    l1 = np.where(ea_is_major, eb, ea)

    active = l2 < 0.0
    l2_safe = np.where(active, l2, 1.0)
    rb2 = (l1 * l1) / (l2_safe * l2_safe)
    s2 = l1 * l1 + l2 * l2
    v = np.exp(-rb2 / (2.0 * beta * beta)) * (-np.expm1(-s2 / (2.0 * gamma * gamma)))
    return np.where(active, v, 0.0)


def _eigvals3(ixx, iyy, izz, ixy, ixz, iyz):
    q = (ixx + iyy + izz) / 3.0
    dxx = ixx - q
    dyy = iyy - q
    dzz = izz - q
    p1 = ixy * ixy + ixz * ixz + iyz * iyz
    p2 = dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * p1
    p = np.sqrt(p2 / 6.0)
    safe_p = np.where(p > 0.0, p, 1.0)
    bxx = dxx / safe_p
    byy = dyy / safe_p
    bzz = dzz / safe_p
    bxy = ixy / safe_p
    bxz = ixz / safe_p
    byz = iyz / safe_p
    half_det = 0.5 * (
        bxx * (byy * bzz - byz * byz)
        - bxy * (bxy * bzz - byz * bxz)
        + bxz * (bxy * byz - byy * bxz)
    )
    phi = np.arccos(np.clip(half_det, -1.0, 1.0)) / 3.0
    e1 = q + 2.0 * p * np.cos(phi)
    e3 = q + 2.0 * p * np.cos(phi + _TWO_PI_THIRDS)
    e2 = 3.0 * q - e1 - e3
    eigs = np.stack([e1, e2, e3], axis=-1)
    order = np.argsort(np.abs(eigs), axis=-1, kind="stable")
    eigs = np.take_along_axis(eigs, order, axis=-1)
    return eigs[..., 0], eigs[..., 1], eigs[..., 2]


def response_field_3d(
    ixx, iyy, izz, ixy, ixz, iyz, alpha, beta, gamma, hard_zero, soft_suppression
):
    l1, l2, l3 = _eigvals3(ixx, iyy, izz, ixy, ixz, iyz)

    if hard_zero:
        active = (l2 < 0.0) & (l3 < 0.0)
    else:
        active = (l2 != 0.0) & (l3 != 0.0)
    l2_safe = np.where(active, l2, 1.0)
    l3_safe = np.where(active, l3, 1.0)
    ra2 = (l2 * l2) / (l3_safe * l3_safe)
    rb2 = (l1 * l1) / np.abs(l2_safe * l3_safe)
    s2 = l1 * l1 + l2 * l2 + l3 * l3
    v = (
        (-np.expm1(-ra2 / (2.0 * alpha * alpha)))
        * np.exp(-rb2 / (2.0 * beta * beta))
        * (-np.expm1(-s2 / (2.0 * gamma * gamma)))
    )
    out = np.where(active, v, 0.0)

    if soft_suppression:
        # Noise voxels (l3 > 0): zero the dominant curvature and pin the blob
        # ratio to 1, collapsing to the two-eigenvalue response on l2.
        background = l3 > 0.0
        if hard_zero:
            soft_active = background & (l2 < 0.0)
        else:
            soft_active = background & (l2 != 0.0)
        v_soft = np.exp(-1.0 / (2.0 * beta * beta)) * (
            -np.expm1(-(l2 * l2) / (gamma * gamma))
        )
        out = np.where(soft_active, v_soft, np.where(background, 0.0, out))
    return out
