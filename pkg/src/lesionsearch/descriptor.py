"""GeM-pooled, L2-normalized image descriptors.

The built-in encoder stacks multiscale structure-filter responses (the
scale sweep split into contiguous bands, max-pooled per band) with the raw
intensity plane, then applies generalized-mean pooling per channel,

    GeM_p(x) = (mean(x^p))^(1/p),

and L2 normalization. Externally computed feature maps (e.g. from a neural
backbone) enter through the same pooling path via the ``precomputed``
encoder and a small raw-float interchange format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .frangi import FrangiParams, hessian_at
from . import kernels
from .imagecore import ImageGrid

BUILTIN_ENCODER = "builtin_frangi_stack"
PRECOMPUTED_ENCODER = "precomputed"


@dataclass(frozen=True)
class FeatureMap:
    """Non-negative (channels, height, width) feature stack."""

    data: np.ndarray
    encoder_id: str = PRECOMPUTED_ENCODER

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] < 1:
            raise ValueError(f"feature map must be (C, H, W) with C >= 1, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("feature map contains non-finite values")
        if arr.min() < 0.0:
            raise ValueError("feature map values must be >= 0 for GeM pooling")
        object.__setattr__(self, "data", arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class DescriptorConfig:
    encoder: str = BUILTIN_ENCODER
    gem_p: float = 3.0
    epsilon: float = 1e-6
    frangi: FrangiParams = field(default_factory=FrangiParams)
    band_count: int = 4

    def __post_init__(self):
        if self.encoder not in (BUILTIN_ENCODER, PRECOMPUTED_ENCODER):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.gem_p <= 0:
            raise ValueError("gem_p must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.band_count < 1:
            raise ValueError("band_count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "encoder": self.encoder,
            "gem_p": self.gem_p,
            "epsilon": self.epsilon,
            "band_count": self.band_count,
            "frangi": {
                "alpha": self.frangi.alpha,
                "beta": self.frangi.beta,
                "gamma": self.frangi.gamma,
                "scales": list(self.frangi.scales),
                "hard_zero_rule": self.frangi.hard_zero_rule,
                "soft_suppression": self.frangi.soft_suppression,
            },
        }

    @staticmethod
    def from_dict(raw: dict) -> "DescriptorConfig":
        frangi_raw = dict(raw.get("frangi", {}))
        if "scales" in frangi_raw:
            frangi_raw["scales"] = tuple(frangi_raw["scales"])
        return DescriptorConfig(
            encoder=raw.get("encoder", BUILTIN_ENCODER),
            gem_p=float(raw.get("gem_p", 3.0)),
            epsilon=float(raw.get("epsilon", 1e-6)),
            band_count=int(raw.get("band_count", 4)),
            frangi=FrangiParams(**frangi_raw),
        )


@dataclass(frozen=True)
class Descriptor:
    """Unit-norm descriptor vector with provenance."""

    vector: np.ndarray
    encoder_id: str
    gem_p: float

    def __post_init__(self):
        vec = np.asarray(self.vector, dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"descriptor must be unit-norm, got ||v|| = {norm}")
        object.__setattr__(self, "vector", vec)

    def __len__(self) -> int:
        return self.vector.size


def feature_stack(image: ImageGrid, params: FrangiParams, band_count: int) -> FeatureMap:
    """Built-in encoder: per-band max of the multiscale structure response
    plus the raw intensity plane.

    The scale sweep is split into ``band_count`` contiguous bands; channel c
    holds the per-voxel max response over band c's scales, and the final
    channel is the image itself. Output channels = band_count + 1.
    """
    if image.depth != 1:
        raise ValueError("feature_stack expects a depth-1 image")
    n_scales = len(params.scales)
    if band_count > n_scales:
        raise ValueError(
            f"band_count {band_count} exceeds the {n_scales} available scales"
        )
    bands = np.array_split(np.arange(n_scales), band_count)
    channels = np.zeros((band_count + 1, image.height, image.width), dtype=np.float64)
    for b, scale_idx in enumerate(bands):
        for i in scale_idx:
            sigma = params.scales[i]
            hf = hessian_at(image, sigma)
            v = kernels.response_field_2d(hf.ixx, hf.ixy, hf.iyy, params.beta, params.gamma)
            np.maximum(channels[b], v, out=channels[b])
    channels[band_count] = image.plane(0)
    return FeatureMap(np.maximum(channels, 0.0), encoder_id=BUILTIN_ENCODER)


def gem_pool(fm: FeatureMap | np.ndarray, p: float, epsilon: float = 1e-6) -> np.ndarray:
    """Generalized-mean pooling per channel: (mean(x^p))^(1/p).

    Values below ``epsilon`` are clamped up before exponentiation, which
    keeps fractional powers of zero well-behaved. p=1 is the plain mean of
    the clamped values; p -> inf approaches the channel max.
    """
    if p <= 0:
        raise ValueError("p must be > 0")
    data = fm.data if isinstance(fm, FeatureMap) else np.asarray(fm, dtype=np.float64)
    if data.ndim < 2:
        raise ValueError("gem_pool expects (C, ...) with at least one pooled axis")
    if not np.all(np.isfinite(data)):
        raise ValueError("gem_pool input contains non-finite values")
    if data.min() < 0.0:
        raise ValueError("gem_pool input must be >= 0")
    clamped = np.maximum(data.reshape(data.shape[0], -1), epsilon)
    pooled = np.mean(clamped**p, axis=1) ** (1.0 / p)
    return pooled


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """v / ||v||_2; a zero vector signals a degenerate descriptor and raises."""
    v = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector (degenerate descriptor)")
    return v / norm


def describe(source: ImageGrid | FeatureMap, cfg: DescriptorConfig | None = None) -> Descriptor:
    """Compute the unit descriptor of an image (builtin encoder) or of a
    precomputed feature map."""
    cfg = cfg or DescriptorConfig()
    if cfg.encoder == BUILTIN_ENCODER:
        if not isinstance(source, ImageGrid):
            raise TypeError("builtin encoder expects an ImageGrid")
        fm = feature_stack(source, cfg.frangi, cfg.band_count)
    else:
        if not isinstance(source, FeatureMap):
            raise TypeError("precomputed encoder expects a FeatureMap")
        fm = source
    vector = l2_normalize(gem_pool(fm, cfg.gem_p, cfg.epsilon))
    return Descriptor(vector=vector, encoder_id=fm.encoder_id, gem_p=cfg.gem_p)


def describe_raw_pixels(image: ImageGrid) -> Descriptor:
    """Baseline descriptor: the L2-normalized raw pixel vector."""
    return Descriptor(
        vector=l2_normalize(image.data.ravel()), encoder_id="raw_pixels", gem_p=float("nan")
    )


# ---------------------------------------------------------------------------
# Interchange formats: a single JSON header line followed by packed
# little-endian float32 payload.
# ---------------------------------------------------------------------------


def _write_header_payload(path: Path, header: dict, payload: bytes) -> None:
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        fh.write(payload)


def _read_header_payload(path: Path) -> tuple[dict, bytes]:
    with open(path, "rb") as fh:
        header_line = fh.readline()
        payload = fh.read()
    return json.loads(header_line.decode("utf-8")), payload


def save_feature_map(fm: FeatureMap, path: str | Path) -> None:
    header = {
        "channels": fm.channels,
        "width": fm.width,
        "height": fm.height,
        "encoder_id": fm.encoder_id,
    }
    _write_header_payload(Path(path), header, fm.data.astype("<f4").tobytes())


def load_feature_map(path: str | Path) -> FeatureMap:
    header, payload = _read_header_payload(Path(path))
    shape = (int(header["channels"]), int(header["height"]), int(header["width"]))
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != shape[0] * shape[1] * shape[2]:
        raise ValueError(f"feature map payload size mismatch in {path}")
    return FeatureMap(
        data.reshape(shape).astype(np.float64),
        encoder_id=str(header.get("encoder_id", PRECOMPUTED_ENCODER)),
    )


def save_descriptor_table(
    vectors: np.ndarray, path: str | Path, gem_p: float, encoder_id: str
) -> None:
    """Write an (N, D) descriptor table: JSON header + packed LE float32 rows."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("descriptor table must be 2D (count, dim)")
    header = {
        "count": int(vectors.shape[0]),
        "dim": int(vectors.shape[1]),
        "gem_p": gem_p,
        "encoder_id": encoder_id,
    }
    _write_header_payload(Path(path), header, vectors.astype("<f4").tobytes())


def load_descriptor_table(path: str | Path) -> tuple[np.ndarray, dict]:
    header, payload = _read_header_payload(Path(path))
    count, dim = int(header["count"]), int(header["dim"])
    data = np.frombuffer(payload, dtype="<f4")
    if data.size != count * dim:
        raise ValueError(f"descriptor payload size mismatch in {path}")
    return data.reshape(count, dim).astype(np.float64), header
