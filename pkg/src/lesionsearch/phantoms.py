"""Synthetic lesion phantoms for benchmarks and end-to-end tests.

Three structure classes at the working 64x64 resolution: ``blob`` (bright
elliptical bumps), ``ridge`` (bright elongated segments), and ``noise``
(smoothed random fields with no coherent structure). Patients are synthetic
too: each patient carries one lesion class and its own parameter regime
(size/contrast band), so intra-patient lesions are systematically more
alike than cross-patient lesions of the same class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import ImageGrid
from . import kernels

CLASSES = ("blob", "ridge", "noise")


@dataclass(frozen=True)
class PhantomCorpus:
    images: tuple[ImageGrid, ...]
    labels: tuple[str, ...]
    patient_ids: tuple[str, ...]
    study_ids: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.images)


def _coords(size: int) -> tuple[np.ndarray, np.ndarray]:
    ax = np.arange(size, dtype=np.float64)
    return np.meshgrid(ax, ax, indexing="xy")


def _background(rng: np.random.Generator, size: int, noise_sd: float) -> np.ndarray:
    return 0.08 + noise_sd * rng.standard_normal((size, size))


def blob_image(
    rng: np.random.Generator,
    size: int = 64,
    sigma_major: float = 7.0,
    aspect: float = 0.6,
    amplitude: float = 0.8,
    noise_sd: float = 0.02,
) -> ImageGrid:
    """Bright rotated elliptical Gaussian bump on a dark noisy background."""
    xx, yy = _coords(size)
    cx = size / 2 + rng.uniform(-6, 6)
    cy = size / 2 + rng.uniform(-6, 6)
    theta = rng.uniform(0, np.pi)
    ct, st = np.cos(theta), np.sin(theta)
    u = (xx - cx) * ct + (yy - cy) * st
    v = -(xx - cx) * st + (yy - cy) * ct
    sig_u = sigma_major
    sig_v = max(1.5, sigma_major * aspect)
    bump = amplitude * np.exp(-0.5 * ((u / sig_u) ** 2 + (v / sig_v) ** 2))
    return ImageGrid(np.clip(_background(rng, size, noise_sd) + bump, 0.0, 1.0)[np.newaxis])


def ridge_image(
    rng: np.random.Generator,
    size: int = 64,
    width: float = 2.5,
    length_sigma: float = 16.0,
    amplitude: float = 0.8,
    noise_sd: float = 0.02,
) -> ImageGrid:
    """Bright elongated segment: Gaussian cross-section, tapered ends."""
    xx, yy = _coords(size)
    cx = size / 2 + rng.uniform(-5, 5)
    cy = size / 2 + rng.uniform(-5, 5)
    theta = rng.uniform(0, np.pi)
    ct, st = np.cos(theta), np.sin(theta)
    along = (xx - cx) * ct + (yy - cy) * st
    across = -(xx - cx) * st + (yy - cy) * ct
    ridge = amplitude * np.exp(
        -0.5 * (across / width) ** 2 - 0.5 * (along / length_sigma) ** 2
    )
    return ImageGrid(np.clip(_background(rng, size, noise_sd) + ridge, 0.0, 1.0)[np.newaxis])


def noise_image(
    rng: np.random.Generator, size: int = 64, smear_sigma: float = 0.8
) -> ImageGrid:
    """Structure-free field: white noise, lightly smoothed, range-normalized."""
    field = rng.random((size, size))
    if smear_sigma > 0:
        field = kernels.gaussian_blur_volume(field[np.newaxis], smear_sigma)[0]
    lo, hi = field.min(), field.max()
    return ImageGrid(((field - lo) / (hi - lo))[np.newaxis])


def make_phantom_corpus(
    per_class: int = 40,
    patients_per_class: int = 4,
    seed: int = 0,
    size: int = 64,
    patient_shares: tuple[int, ...] | None = None,
) -> PhantomCorpus:
    """Generate the labelled three-class corpus.

    Lesions are dealt round-robin to ``patients_per_class`` synthetic
    patients per class; every patient is label-homogeneous and draws its
    lesion parameters from a patient-specific regime. ``patient_shares``
    overrides the even split with explicit per-patient lesion counts (and
    then ``per_class`` = sum of the shares).
    """
    if patient_shares is not None:
        patients_per_class = len(patient_shares)
        per_class = int(sum(patient_shares))
        assignment = [
            p for p, share in enumerate(patient_shares) for _ in range(share)
        ]
    else:
        assignment = [i % patients_per_class for i in range(per_class)]
    rng = np.random.default_rng(seed)
    images: list[ImageGrid] = []
    labels: list[str] = []
    patient_ids: list[str] = []
    study_ids: list[str] = []
    for cls in CLASSES:
        regimes = []
        for _ in range(patients_per_class):
            regimes.append(
                {
                    "sigma_major": rng.uniform(5.0, 9.0),
                    "aspect": rng.uniform(0.45, 0.85),
                    "width": rng.uniform(1.8, 3.2),
                    "length_sigma": rng.uniform(12.0, 20.0),
                    "amplitude": rng.uniform(0.6, 0.9),
                    "smear": rng.uniform(0.4, 1.2),
                }
            )
        for i in range(per_class):
            patient = assignment[i]
            regime = regimes[patient]
            if cls == "blob":
                img = blob_image(
                    rng,
                    size=size,
                    sigma_major=regime["sigma_major"] * rng.uniform(0.9, 1.1),
                    aspect=regime["aspect"] * rng.uniform(0.9, 1.1),
                    amplitude=regime["amplitude"] * rng.uniform(0.92, 1.08),
                )
            elif cls == "ridge":
                img = ridge_image(
                    rng,
                    size=size,
                    width=regime["width"] * rng.uniform(0.9, 1.1),
                    length_sigma=regime["length_sigma"] * rng.uniform(0.9, 1.1),
                    amplitude=regime["amplitude"] * rng.uniform(0.92, 1.08),
                )
            else:
                img = noise_image(rng, size=size, smear_sigma=regime["smear"])
            images.append(img)
            labels.append(cls)
            patient_ids.append(f"{cls}_patient_{patient}")
            study_ids.append(f"study_{cls}_{i}")
    return PhantomCorpus(
        images=tuple(images),
        labels=tuple(labels),
        patient_ids=tuple(patient_ids),
        study_ids=tuple(study_ids),
    )
