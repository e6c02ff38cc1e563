"""Image ingestion and preprocessing.

Grayscale rasters are held as ``ImageGrid`` objects: float64 intensities in
[0, 1], shaped (depth, height, width) with depth 1 for plain 2D images.
Lesion metadata arrives as a CSV manifest mirroring PACS bookmark tables
(one bounding box + patient/study/label per row). The operations here cover
the preprocessing path: manifest parsing, ROI cropping, bilinear resizing to
the working resolution, and the seeded stochastic augmentations (flips,
intensity jitter, Gaussian blur).
"""

from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels

MANIFEST_COLUMNS = (
    "image_path",
    "patient_id",
    "study_id",
    "lesion_type",
    "left",
    "top",
    "right",
    "bottom",
)


class ManifestError(ValueError):
    """Malformed manifest content."""


class SchemaError(ManifestError):
    """Manifest header is missing a required column."""


class RowError(ManifestError):
    """A manifest row violates the record invariants.

    ``line`` is the 1-based line number in the source file (header = line 1).
    """

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class ImageGrid:
    """Grayscale intensity raster.

    ``data`` has shape (depth, height, width), dtype float64, values in [0, 1].
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[np.newaxis, :, :]
        if arr.ndim != 3:
            raise ValueError(f"image data must be 2D or 3D, got ndim={arr.ndim}")
        if arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"image dimensions must be >= 1, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("image data contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError(
                f"image intensities must lie in [0, 1], got range "
                f"[{arr.min()}, {arr.max()}]"
            )
        object.__setattr__(self, "data", arr)

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def depth(self) -> int:
        return self.data.shape[0]

    def plane(self, z: int = 0) -> np.ndarray:
        """2D view (height, width) of slice ``z``."""
        return self.data[z]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned rectangle in pixel coordinates, right/bottom exclusive."""

    left: int
    top: int
    right: int
    bottom: int

    def __post_init__(self):
        if not (self.left < self.right and self.top < self.bottom):
            raise ValueError(
                f"degenerate bbox: need left < right and top < bottom, "
                f"got ({self.left}, {self.top}, {self.right}, {self.bottom})"
            )

    @property
    def width(self) -> int:
        return self.right - self.left

    @property
    def height(self) -> int:
        return self.bottom - self.top


@dataclass(frozen=True)
class LesionRecord:
    image_path: str
    patient_id: str
    study_id: str
    lesion_type: str
    bbox: BBox


@dataclass(frozen=True)
class Manifest:
    """Immutable, ordered collection of lesion records.

    ``label_set`` lists the distinct lesion types in first-seen order.
    """

    records: tuple[LesionRecord, ...]
    label_set: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class AugmentSpec:
    """Parameters of the stochastic augmentation pipeline.

    ``intensity_jitter`` bounds both the additive brightness shift and the
    deviation of the multiplicative contrast factor from 1; outputs are
    clamped back to [0, 1] regardless.
    """

    flip_h: float = 0.0
    flip_v: float = 0.0
    blur_sigma_range: tuple[float, float] = (0.0, 0.0)
    intensity_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.flip_h <= 1.0 and 0.0 <= self.flip_v <= 1.0):
            raise ValueError("flip probabilities must lie in [0, 1]")
        lo, hi = self.blur_sigma_range
        if lo < 0.0 or lo > hi:
            raise ValueError("blur_sigma_range must satisfy 0 <= lo <= hi")
        if self.intensity_jitter < 0.0:
            raise ValueError("intensity_jitter must be >= 0")


def load_manifest(path: str | Path) -> Manifest:
    """Parse a lesion manifest CSV.

    The header must declare the columns
    ``image_path,patient_id,study_id,lesion_type,left,top,right,bottom``
    (extra columns are ignored). Raises ``SchemaError`` for a missing column
    and ``RowError`` (with the offending line number) for bad rows.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return parse_manifest(fh)


def parse_manifest(source: str | io.TextIOBase) -> Manifest:
    """Like ``load_manifest`` but reads CSV text or an open text stream."""
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.DictReader(source)
    header = reader.fieldnames or []
    for col in MANIFEST_COLUMNS:
        if col not in header:
            raise SchemaError(f"manifest is missing required column {col!r}")

    records: list[LesionRecord] = []
    label_set: list[str] = []
    seen: set[tuple[str, int, int, int, int]] = set()
    for line_no, row in enumerate(reader, start=2):
        coords = {}
        for col in ("left", "top", "right", "bottom"):
            raw = (row[col] or "").strip()
            try:
                coords[col] = int(raw)
            except ValueError:
                raise RowError(line_no, f"non-numeric {col} value {raw!r}") from None
        try:
            bbox = BBox(coords["left"], coords["top"], coords["right"], coords["bottom"])
        except ValueError as exc:
            raise RowError(line_no, str(exc)) from None
        patient_id = (row["patient_id"] or "").strip()
        if not patient_id:
            raise RowError(line_no, "patient_id must be nonempty")
        image_path = (row["image_path"] or "").strip()
        if not image_path:
            raise RowError(line_no, "image_path must be nonempty")
        key = (image_path, bbox.left, bbox.top, bbox.right, bbox.bottom)
        if key in seen:
            raise RowError(line_no, f"duplicate (image_path, bbox) pair: {key}")
        seen.add(key)
        lesion_type = (row["lesion_type"] or "").strip()
        if lesion_type not in label_set:
            label_set.append(lesion_type)
        records.append(
            LesionRecord(
                image_path=image_path,
                patient_id=patient_id,
                study_id=(row["study_id"] or "").strip(),
                lesion_type=lesion_type,
                bbox=bbox,
            )
        )
    return Manifest(records=tuple(records), label_set=tuple(label_set))


def crop_roi(image: ImageGrid, bbox: BBox) -> ImageGrid:
    """Extract the bbox region; pixel (x, y) of the output is pixel
    (left + x, top + y) of the input."""
    if bbox.left < 0 or bbox.top < 0 or bbox.right > image.width or bbox.bottom > image.height:
        raise ValueError(
            f"bbox ({bbox.left}, {bbox.top}, {bbox.right}, {bbox.bottom}) exceeds "
            f"image bounds (0, 0, {image.width}, {image.height})"
        )
    return ImageGrid(image.data[:, bbox.top : bbox.bottom, bbox.left : bbox.right].copy())


def resize_bilinear(image: ImageGrid, w: int, h: int) -> ImageGrid:
    """Resample each slice to (w, h) with corner-aligned bilinear interpolation.

    Corner alignment maps output pixel 0 to input pixel 0 and output pixel
    w-1 to input pixel W-1; resizing to the source dimensions is an exact
    copy. Every output value is a convex combination of input values.
    """
    if w < 1 or h < 1:
        raise ValueError(f"target dimensions must be >= 1, got ({w}, {h})")
    src = image.data
    W, H = image.width, image.height

    def _coords(n_out: int, n_in: int) -> np.ndarray:
        if n_out == 1:
            return np.array([(n_in - 1) / 2.0])
        return np.linspace(0.0, n_in - 1, n_out)

    xs = _coords(w, W)
    ys = _coords(h, H)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = (xs - x0)[np.newaxis, np.newaxis, :]
    fy = (ys - y0)[np.newaxis, :, np.newaxis]

    # lerp form a + t*(b - a): constants and on-grid samples pass through
    # bit-exactly, so identity resizes copy the input.
    rows0 = src[:, y0, :]
    rows = rows0 + fy * (src[:, y1, :] - rows0)
    left = rows[:, :, x0]
    out = left + fx * (rows[:, :, x1] - left)
    return ImageGrid(np.clip(out, 0.0, 1.0))


def augment(image: ImageGrid, spec: AugmentSpec) -> ImageGrid:
    """Apply the seeded augmentation pipeline: flips, intensity jitter, blur.

    Pure function of (image, spec): the same seed yields a bit-identical
    output. Draw order is fixed (flip_h, flip_v, additive shift,
    multiplicative factor, blur sigma) so specs stay comparable across runs.
    """
    rng = np.random.default_rng(spec.seed)
    out = image.data
    if rng.random() < spec.flip_h:
        out = out[:, :, ::-1]
    if rng.random() < spec.flip_v:
        out = out[:, ::-1, :]
    shift = rng.uniform(-spec.intensity_jitter, spec.intensity_jitter)
    gain = rng.uniform(1.0 - spec.intensity_jitter, 1.0 + spec.intensity_jitter)
    sigma = rng.uniform(spec.blur_sigma_range[0], spec.blur_sigma_range[1])
    out = out * gain + shift
    if sigma > 0.0:
        out = kernels.gaussian_blur_volume(np.ascontiguousarray(out), sigma)
    return ImageGrid(np.clip(out, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Raster I/O
#
# Supported inputs: 8/16-bit grayscale PNG, PGM (P2/P5), and raw float32
# binaries with a JSON dimensions sidecar (<file>.json). Intensities are
# min-max normalized to [0, 1] per image at load time; a constant image
# normalizes to all zeros.
# ---------------------------------------------------------------------------


def normalize01(arr: np.ndarray) -> np.ndarray:
    """Min-max normalize to [0, 1]; constant input maps to zeros."""
    arr = np.asarray(arr, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("raster contains non-finite values")
    lo = arr.min()
    hi = arr.max()
    if hi > lo:
        return (arr - lo) / (hi - lo)
    return np.zeros_like(arr)


def load_image(path: str | Path) -> ImageGrid:
    """Load a raster by extension (.png, .pgm, .raw) and normalize to [0, 1]."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        return decode_image(path.read_bytes())
    if suffix == ".pgm":
        return decode_image(path.read_bytes())
    if suffix == ".raw":
        return _load_raw_float(path)
    raise ValueError(f"unsupported raster format: {path.name!r}")


def decode_image(data: bytes) -> ImageGrid:
    """Decode PNG or PGM bytes into a normalized ImageGrid."""
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return ImageGrid(normalize01(_decode_png(data)))
    if data[:2] in (b"P2", b"P5"):
        return ImageGrid(normalize01(_decode_pgm(data)))
    raise ValueError("unrecognized image payload: expected grayscale PNG or PGM")


def _decode_png(data: bytes) -> np.ndarray:
    from PIL import Image

    with Image.open(io.BytesIO(data)) as img:
        if img.mode in ("L", "I", "I;16"):
            return np.asarray(img, dtype=np.float64)
        raise ValueError(f"PNG must be single-channel grayscale, got mode {img.mode!r}")


def _decode_pgm(data: bytes) -> np.ndarray:
    tokens: list[bytes] = []
    pos = 0
    # header = magic, width, height, maxval; '#' starts a comment to EOL
    while len(tokens) < 4:
        match = re.match(rb"\s*(?:#[^\n]*\n\s*)*(\S+)", data[pos:])
        if match is None:
            raise ValueError("truncated PGM header")
        tokens.append(match.group(1))
        pos += match.end()
    magic, w_s, h_s, maxval_s = tokens
    width, height, maxval = int(w_s), int(h_s), int(maxval_s)
    if width < 1 or height < 1 or not (0 < maxval < 65536):
        raise ValueError("invalid PGM header")
    if magic == b"P2":
        values = np.array(data[pos:].split(), dtype=np.float64)
        if values.size != width * height:
            raise ValueError("PGM pixel count mismatch")
        return values.reshape(height, width)
    if magic == b"P5":
        pos += 1  # single whitespace byte after maxval
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        expected = width * height * dtype.itemsize
        raster = data[pos : pos + expected]
        if len(raster) != expected:
            raise ValueError("PGM raster truncated")
        return np.frombuffer(raster, dtype=dtype).reshape(height, width).astype(np.float64)
    raise ValueError(f"unsupported PGM magic {magic!r}")


def _load_raw_float(path: Path) -> ImageGrid:
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise ValueError(f"raw raster {path.name!r} is missing its sidecar {sidecar.name!r}")
    header = json.loads(sidecar.read_text(encoding="utf-8"))
    width = int(header["width"])
    height = int(header["height"])
    depth = int(header.get("depth", 1))
    values = np.fromfile(path, dtype="<f4")
    if values.size != width * height * depth:
        raise ValueError(
            f"raw raster {path.name!r} holds {values.size} floats, "
            f"expected {width * height * depth}"
        )
    return ImageGrid(normalize01(values.reshape(depth, height, width)))


def save_raw_float(image: ImageGrid, path: str | Path) -> None:
    path = Path(path)
    image.data.astype("<f4").tofile(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(
        json.dumps({"width": image.width, "height": image.height, "depth": image.depth}),
        encoding="utf-8",
    )


def save_png(plane: np.ndarray, path: str | Path, bit_depth: int = 8) -> None:
    """Write a 2D array of [0, 1] values as an 8- or 16-bit grayscale PNG."""
    from PIL import Image

    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("save_png expects a 2D plane")
    if bit_depth == 8:
        img = Image.fromarray(np.round(np.clip(plane, 0, 1) * 255).astype(np.uint8), mode="L")
    elif bit_depth == 16:
        img = Image.fromarray(np.round(np.clip(plane, 0, 1) * 65535).astype(np.uint16))
    else:
        raise ValueError("bit_depth must be 8 or 16")
    img.save(Path(path), format="PNG")


def write_pgm(plane: np.ndarray, path: str | Path, maxval: int = 255) -> None:
    """Write a 2D array of [0, 1] values as binary PGM (P5)."""
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("write_pgm expects a 2D plane")
    if not (0 < maxval < 65536):
        raise ValueError("maxval must be in [1, 65535]")
    quantized = np.round(np.clip(plane, 0, 1) * maxval)
    raster = (
        quantized.astype(">u2").tobytes() if maxval > 255 else quantized.astype("u1").tobytes()
    )
    header = f"P5\n{plane.shape[1]} {plane.shape[0]}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(header + raster)
