"""Numba ``@njit`` kernel implementations (hot path, see ``backend``).

Mirrors ``_np_kernels`` operation for operation; kept free of fastmath and
parallel execution so results are deterministic and match the numpy path to
roundoff.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

_TWO_PI_THIRDS = 2.0943951023931953  # 2*pi/3


@njit(cache=True, inline="always")
def _mirror(i: int, n: int) -> int:
    # reflection without edge duplication, period 2n-2 (numpy pad "reflect")
    if n == 1:
        return 0
    period = 2 * n - 2
    j = i % period
    if j < 0:
        j += period
    if j >= n:
        j = period - j
    return j


@njit(cache=True)
def blur_volume(vol: np.ndarray, kern: np.ndarray, blur_z: bool) -> np.ndarray:
    # Per axis: shifted-scaled row accumulation (j outer, pixels inner) so the
    # inner loops stay contiguous and SIMD-friendly without fastmath; mirror
    # handling lives in a padded row buffer for the x pass and in row/plane
    # index lookups for y and z.
    d, h, w = vol.shape
    radius = (kern.size - 1) // 2
    tmp = np.empty_like(vol)
    out = np.empty_like(vol)

    buf = np.empty(w + 2 * radius, dtype=np.float64)
    for z in range(d):
        for y in range(h):
            for i in range(-radius, w + radius):
                buf[i + radius] = vol[z, y, _mirror(i, w)]
            row = tmp[z, y]
            k0 = kern[0]
            for x in range(w):
                row[x] = k0 * buf[x]
            for j in range(1, kern.size):
                kj = kern[j]
                for x in range(w):
                    row[x] += kj * buf[x + j]

    for z in range(d):
        for y in range(h):
            dst = out[z, y]
            src = tmp[z, _mirror(y - radius, h)]
            k0 = kern[0]
            for x in range(w):
                dst[x] = k0 * src[x]
            for j in range(1, kern.size):
                src = tmp[z, _mirror(y - radius + j, h)]
                kj = kern[j]
                for x in range(w):
                    dst[x] += kj * src[x]

    if blur_z and d > 1:
        for z in range(d):
            for y in range(h):
                dst = tmp[z, y]
                src = out[_mirror(z - radius, d), y]
                k0 = kern[0]
                for x in range(w):
                    dst[x] = k0 * src[x]
                for j in range(1, kern.size):
                    src = out[_mirror(z - radius + j, d), y]
                    kj = kern[j]
                    for x in range(w):
                        dst[x] += kj * src[x]
        return tmp
    return out


@njit(cache=True)
def second_derivs_2d(plane: np.ndarray):
    h, w = plane.shape
    ixx = np.empty_like(plane)
    ixy = np.empty_like(plane)
    iyy = np.empty_like(plane)
    for y in range(h):
        yp = _mirror(y + 1, h)
        ym = _mirror(y - 1, h)
        for x in range(w):
            xp = _mirror(x + 1, w)
            xm = _mirror(x - 1, w)
            c = plane[y, x]
            ixx[y, x] = plane[y, xp] - 2.0 * c + plane[y, xm]
            iyy[y, x] = plane[yp, x] - 2.0 * c + plane[ym, x]
            ixy[y, x] = 0.25 * (
                plane[yp, xp] - plane[yp, xm] - plane[ym, xp] + plane[ym, xm]
            )
    return ixx, ixy, iyy


@njit(cache=True)
def second_derivs_3d(vol: np.ndarray):
    d, h, w = vol.shape
    ixx = np.empty_like(vol)
    iyy = np.empty_like(vol)
    izz = np.empty_like(vol)
    ixy = np.empty_like(vol)
    ixz = np.empty_like(vol)
    iyz = np.empty_like(vol)
    for z in range(d):
        zp = _mirror(z + 1, d)
        zm = _mirror(z - 1, d)
        for y in range(h):
            yp = _mirror(y + 1, h)
            ym = _mirror(y - 1, h)
            for x in range(w):
                xp = _mirror(x + 1, w)
                xm = _mirror(x - 1, w)
                c = vol[z, y, x]
                ixx[z, y, x] = vol[z, y, xp] - 2.0 * c + vol[z, y, xm]
                iyy[z, y, x] = vol[z, yp, x] - 2.0 * c + vol[z, ym, x]
                izz[z, y, x] = vol[zp, y, x] - 2.0 * c + vol[zm, y, x]
                ixy[z, y, x] = 0.25 * (
                    vol[z, yp, xp] - vol[z, yp, xm] - vol[z, ym, xp] + vol[z, ym, xm]
                )
                ixz[z, y, x] = 0.25 * (
                    vol[zp, y, xp] - vol[zp, y, xm] - vol[zm, y, xp] + vol[zm, y, xm]
                )
                iyz[z, y, x] = 0.25 * (
                    vol[zp, yp, x] - vol[zp, ym, x] - vol[zm, yp, x] + vol[zm, ym, x]
                )
    return ixx, iyy, izz, ixy, ixz, iyz


@njit(cache=True)
def response_field_2d(ixx, ixy, iyy, beta, gamma):
    h, w = ixx.shape
    out = np.zeros((h, w), dtype=np.float64)
    inv_2b2 = 1.0 / (2.0 * beta * beta)
    inv_2g2 = 1.0 / (2.0 * gamma * gamma)
    for y in range(h):
        for x in range(w):
            mean = 0.5 * (ixx[y, x] + iyy[y, x])
            half_diff = 0.5 * (ixx[y, x] - iyy[y, x])
            disc = math.sqrt(half_diff * half_diff + ixy[y, x] * ixy[y, x])
            ea = mean + disc
            eb = mean - disc
            if abs(ea) >= abs(eb):
                l1, l2 = eb, ea
            else:
                l1, l2 = ea, eb
            if l2 < 0.0:
                rb2 = (l1 * l1) / (l2 * l2)
                s2 = l1 * l1 + l2 * l2
                out[y, x] = math.exp(-rb2 * inv_2b2) * (-math.expm1(-s2 * inv_2g2))
    return out


@njit(cache=True, inline="always")
def _eig3_voxel(axx, ayy, azz, axy, axz, ayz):
    q = (axx + ayy + azz) / 3.0
    dxx = axx - q
    dyy = ayy - q
    dzz = azz - q
    p1 = axy * axy + axz * axz + ayz * ayz
    p2 = dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    if p == 0.0:
        return q, q, q
    bxx = dxx / p
    byy = dyy / p
    bzz = dzz / p
    bxy = axy / p
    bxz = axz / p
    byz = ayz / p
    half_det = 0.5 * (
        bxx * (byy * bzz - byz * byz)
        - bxy * (bxy * bzz - byz * bxz)
        + bxz * (bxy * byz - byy * bxz)
    )
    if half_det > 1.0:
        half_det = 1.0
    elif half_det < -1.0:
        half_det = -1.0
    phi = math.acos(half_det) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + _TWO_PI_THIRDS)
    e2 = 3.0 * q - e1 - e3
    # sort ascending by absolute value (3-element network, stable)
    if abs(e2) < abs(e1):
        e1, e2 = e2, e1
    if abs(e3) < abs(e2):
        e2, e3 = e3, e2
        if abs(e2) < abs(e1):
            e1, e2 = e2, e1
    return e1, e2, e3


@njit(cache=True)
def response_field_3d(
    ixx, iyy, izz, ixy, ixz, iyz, alpha, beta, gamma, hard_zero, soft_suppression
):
    d, h, w = ixx.shape
    out = np.zeros((d, h, w), dtype=np.float64)
    inv_2a2 = 1.0 / (2.0 * alpha * alpha)
    inv_2b2 = 1.0 / (2.0 * beta * beta)
    inv_2g2 = 1.0 / (2.0 * gamma * gamma)
    soft_rb_factor = math.exp(-1.0 / (2.0 * beta * beta))
    for z in range(d):
        for y in range(h):
            for x in range(w):
                l1, l2, l3 = _eig3_voxel(
                    ixx[z, y, x],
                    iyy[z, y, x],
                    izz[z, y, x],
                    ixy[z, y, x],
                    ixz[z, y, x],
                    iyz[z, y, x],
                )
                if soft_suppression and l3 > 0.0:
                    if (l2 < 0.0) if hard_zero else (l2 != 0.0):
                        out[z, y, x] = soft_rb_factor * (
                            -math.expm1(-(l2 * l2) / (gamma * gamma))
                        )
                    continue
                if hard_zero:
                    active = l2 < 0.0 and l3 < 0.0
                else:
                    active = l2 != 0.0 and l3 != 0.0
                if not active:
                    continue
                ra2 = (l2 * l2) / (l3 * l3)
                rb2 = (l1 * l1) / abs(l2 * l3)
                s2 = l1 * l1 + l2 * l2 + l3 * l3
                out[z, y, x] = (
                    (-math.expm1(-ra2 * inv_2a2))
                    * math.exp(-rb2 * inv_2b2)
                    * (-math.expm1(-s2 * inv_2g2))
                )
    return out
