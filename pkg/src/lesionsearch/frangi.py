"""Multiscale Hessian structure filter.

Implements the eigenvalue-based vesselness measure of Frangi et al. (1998,
"Multiscale vessel enhancement filtering") with the modifications this
engine uses for lesion contours: a sign rule that zeroes the response
wherever the dominant curvatures are positive (bright-structure detection),
an optional soft noise-suppression variant, and a max aggregation over a
dense scale sweep (default sigma 1.0 to 9.0, step 0.2).

Per scale the pipeline is: Gaussian blur at sigma, central-difference
Hessian scaled by sigma^2, per-voxel symmetric eigendecomposition, and the
three-factor response

    V = (1 - exp(-RA^2 / 2 alpha^2))
        * exp(-RB^2 / 2 beta^2)
        * (1 - exp(-s^2 / 2 gamma^2))

with RA = |l2|/|l3| (plate vs. line), RB = |l1|/sqrt(|l2*l3|) (blobness)
and s = sqrt(l1^2 + l2^2 + l3^2) (second-order structureness), eigenvalues
ordered |l1| <= |l2| <= |l3|. Depth-1 images use the two-eigenvalue
reduction, which drops the RA factor and takes RB = |l1|/|l2|. Degenerate
denominators yield a response of 0, not an error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .imagecore import ImageGrid


def default_scales() -> tuple[float, ...]:
    """The standard sweep: 41 scales from 1.0 to 9.0 in steps of 0.2."""
    return tuple(np.linspace(1.0, 9.0, 41))


@dataclass(frozen=True)
class FrangiParams:
    """Thresholds and scale sweep of the structure filter.

    ``hard_zero_rule`` zeroes the response outright where l2 > 0 or l3 > 0;
    ``soft_suppression`` instead treats l3 > 0 voxels as background noise,
    clamping l3 to 0 and pinning the blob ratio RB to 1 (which collapses the
    response to the two-eigenvalue form on l2).
    """

    alpha: float = 1.0
    beta: float = 0.6
    gamma: float = 0.0444
    scales: tuple[float, ...] = field(default_factory=default_scales)
    hard_zero_rule: bool = True
    soft_suppression: bool = False

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0 and self.gamma > 0):
            raise ValueError("alpha, beta, gamma must all be > 0")
        scales = tuple(float(s) for s in self.scales)
        if not scales:
            raise ValueError("scales must be nonempty")
        if any(s <= 0 for s in scales):
            raise ValueError("scales must be positive")
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise ValueError("scales must be strictly increasing")
        object.__setattr__(self, "scales", scales)


class EigenTriple(NamedTuple):
    """Eigenvalues ordered by ascending absolute value."""

    l1: float
    l2: float
    l3: float


@dataclass(frozen=True)
class HessianField:
    """Per-voxel symmetric second derivatives at one scale, sigma^2-normalized.

    For depth-1 images the arrays are 2D (height, width) and the z-components
    are None; volumetric inputs carry all six 3D components.
    """

    sigma: float
    ixx: np.ndarray
    ixy: np.ndarray
    iyy: np.ndarray
    izz: np.ndarray | None = None
    ixz: np.ndarray | None = None
    iyz: np.ndarray | None = None

    @property
    def is_volumetric(self) -> bool:
        return self.izz is not None


@dataclass(frozen=True)
class ResponseMap:
    """Aggregated multiscale response.

    ``response`` and ``argmax_scale`` share the source image's
    (depth, height, width) shape; ``argmax_scale`` holds the sigma at which
    each voxel attained its maximum (the first scale where nothing fired).
    """

    response: np.ndarray
    argmax_scale: np.ndarray

    def plane(self, z: int = 0) -> np.ndarray:
        return self.response[z]


def gaussian_blur(image: ImageGrid, sigma: float) -> ImageGrid:
    """Separable Gaussian blur with kernel radius ceil(3*sigma) and mirrored
    borders; sigma=0 is the identity. Volumes with depth > 1 blur along z too."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    out = kernels.gaussian_blur_volume(image.data, sigma)
    return ImageGrid(np.clip(out, 0.0, 1.0))


def hessian_at(image: ImageGrid, sigma: float) -> HessianField:
    """Scale-normalized Hessian: central differences on the sigma-blurred
    image, multiplied by sigma^2."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if image.width < 3 or image.height < 3 or (image.depth > 1 and image.depth < 3):
        raise ValueError(
            f"image must span >= 3 pixels along every differentiated axis, "
            f"got (depth, height, width) = {image.data.shape}"
        )
    blurred = kernels.gaussian_blur_volume(image.data, sigma)
    s2 = sigma * sigma
    if image.depth == 1:
        ixx, ixy, iyy = kernels.second_derivs_2d(blurred[0])
        return HessianField(sigma=sigma, ixx=ixx * s2, ixy=ixy * s2, iyy=iyy * s2)
    ixx, iyy, izz, ixy, ixz, iyz = kernels.second_derivs_3d(blurred)
    return HessianField(
        sigma=sigma,
        ixx=ixx * s2,
        ixy=ixy * s2,
        iyy=iyy * s2,
        izz=izz * s2,
        ixz=ixz * s2,
        iyz=iyz * s2,
    )


def eigen_symmetric(matrix) -> list[float]:
    """Eigenvalues of a symmetric 2x2 or 3x3 matrix, ascending by |value|.

    Closed forms only: the 2x2 case is the exact quadratic, the 3x3 case the
    trigonometric (Cardano) solution with a guarded Newton polish on the
    characteristic polynomial. Only the upper triangle is read.
    """
    a = np.asarray(matrix, dtype=np.float64)
    if a.shape == (2, 2):
        vals = _eigvals2_scalar(a[0, 0], a[0, 1], a[1, 1])
    elif a.shape == (3, 3):
        vals = _eigvals3_scalar(a[0, 0], a[1, 1], a[2, 2], a[0, 1], a[0, 2], a[1, 2])
    else:
        raise ValueError(f"expected a 2x2 or 3x3 matrix, got shape {a.shape}")
    return sorted(vals, key=abs)


def _eigvals2_scalar(axx: float, axy: float, ayy: float) -> tuple[float, float]:
    mean = 0.5 * (axx + ayy)
    disc = math.sqrt((0.5 * (axx - ayy)) ** 2 + axy * axy)
    return mean - disc, mean + disc


def _eigvals3_scalar(
    axx: float, ayy: float, azz: float, axy: float, axz: float, ayz: float
) -> tuple[float, float, float]:
    q = (axx + ayy + azz) / 3.0
    dxx, dyy, dzz = axx - q, ayy - q, azz - q
    p1 = axy * axy + axz * axz + ayz * ayz
    p2 = dxx * dxx + dyy * dyy + dzz * dzz + 2.0 * p1
    p = math.sqrt(p2 / 6.0)
    if p == 0.0:
        return q, q, q
    bxx, byy, bzz = dxx / p, dyy / p, dzz / p
    bxy, bxz, byz = axy / p, axz / p, ayz / p
    half_det = 0.5 * (
        bxx * (byy * bzz - byz * byz)
        - bxy * (bxy * bzz - byz * bxz)
        + bxz * (bxy * byz - byy * bxz)
    )
    phi = math.acos(min(1.0, max(-1.0, half_det))) / 3.0
    e1 = q + 2.0 * p * math.cos(phi)
    e3 = q + 2.0 * p * math.cos(phi + 2.0 * math.pi / 3.0)
    e2 = 3.0 * q - e1 - e3

    # characteristic polynomial coefficients for the Newton polish:
    # p(x) = -x^3 + tr x^2 - m2 x + det
    tr = axx + ayy + azz
    m2 = (ayy * azz - ayz * ayz) + (axx * azz - axz * axz) + (axx * ayy - axy * axy)
    det = (
        axx * (ayy * azz - ayz * ayz)
        - axy * (axy * azz - ayz * axz)
        + axz * (axy * ayz - ayy * axz)
    )

    def polish(x: float) -> float:
        for _ in range(2):
            fx = -(x**3) + tr * x * x - m2 * x + det
            dfx = -3.0 * x * x + 2.0 * tr * x - m2
            guard = 1e-8 * (3.0 * x * x + 2.0 * abs(tr * x) + abs(m2)) + 1e-300
            if abs(dfx) <= guard:
                break
            x = x - fx / dfx
        return x

    return polish(e1), polish(e2), polish(e3)


def _validate_triple(eigs: Sequence[float]) -> tuple[float, float, float]:
    if len(eigs) != 3:
        raise ValueError(f"expected three eigenvalues, got {len(eigs)}")
    l1, l2, l3 = (float(v) for v in eigs)
    if not (abs(l1) <= abs(l2) <= abs(l3)):
        raise ValueError(
            f"eigenvalues must be ordered |l1| <= |l2| <= |l3|, got ({l1}, {l2}, {l3})"
        )
    return l1, l2, l3


def frangi_response(
    eigs: Sequence[float] | EigenTriple, params: FrangiParams | None = None
) -> float:
    """Three-eigenvalue structure response in [0, 1].

    Under the hard zero rule any l2 > 0 or l3 > 0 gives exactly 0; with
    soft suppression l3 > 0 voxels instead fall back to the collapsed
    two-eigenvalue response with RB pinned to 1. Degenerate denominators
    (l3 = 0 or l2*l3 = 0) give 0.
    """
    params = params or FrangiParams()
    l1, l2, l3 = _validate_triple(eigs)

    if params.soft_suppression and l3 > 0.0:
        zero_l2 = (l2 >= 0.0) if params.hard_zero_rule else (l2 == 0.0)
        if zero_l2:
            return 0.0
        return math.exp(-1.0 / (2.0 * params.beta * params.beta)) * (
            -math.expm1(-(l2 * l2) / (params.gamma * params.gamma))
        )

    if params.hard_zero_rule and (l2 > 0.0 or l3 > 0.0):
        return 0.0
    if l2 == 0.0 or l3 == 0.0:
        return 0.0
    ra2 = (l2 * l2) / (l3 * l3)
    rb2 = (l1 * l1) / abs(l2 * l3)
    s2 = l1 * l1 + l2 * l2 + l3 * l3
    return (
        (-math.expm1(-ra2 / (2.0 * params.alpha * params.alpha)))
        * math.exp(-rb2 / (2.0 * params.beta * params.beta))
        * (-math.expm1(-s2 / (2.0 * params.gamma * params.gamma)))
    )


def frangi_response_2d(l1: float, l2: float, params: FrangiParams | None = None) -> float:
    """Two-eigenvalue reduction for flat images: no RA factor, RB = |l1|/|l2|.

    l2 > 0 or l2 = 0 gives 0.
    """
    params = params or FrangiParams()
    if abs(l1) > abs(l2):
        raise ValueError(f"eigenvalues must satisfy |l1| <= |l2|, got ({l1}, {l2})")
    if l2 >= 0.0:
        return 0.0
    rb2 = (l1 * l1) / (l2 * l2)
    s2 = l1 * l1 + l2 * l2
    return math.exp(-rb2 / (2.0 * params.beta * params.beta)) * (
        -math.expm1(-s2 / (2.0 * params.gamma * params.gamma))
    )


def frangi_filter(image: ImageGrid, params: FrangiParams | None = None) -> ResponseMap:
    """Max-aggregated response over the scale sweep, with per-voxel argmax.

    Deterministic: repeated runs on the same input agree bit-exactly.
    Depth-1 images take the two-eigenvalue path; volumes the
    three-eigenvalue path (where ``soft_suppression`` applies).
    """
    params = params or FrangiParams()
    volumetric = image.depth > 1
    best = np.zeros_like(image.data)
    best_scale = np.full_like(image.data, params.scales[0])
    for sigma in params.scales:
        hf = hessian_at(image, sigma)
        if volumetric:
            v = kernels.response_field_3d(
                hf.ixx,
                hf.iyy,
                hf.izz,
                hf.ixy,
                hf.ixz,
                hf.iyz,
                params.alpha,
                params.beta,
                params.gamma,
                params.hard_zero_rule,
                params.soft_suppression,
            )
        else:
            v = kernels.response_field_2d(
                hf.ixx, hf.ixy, hf.iyy, params.beta, params.gamma
            )[np.newaxis, :, :]
        improved = v > best
        best = np.where(improved, v, best)
        best_scale = np.where(improved, sigma, best_scale)
    return ResponseMap(response=best, argmax_scale=best_scale)
