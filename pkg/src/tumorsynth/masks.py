"""Sampling of synthetic tumor placement masks inside organ labels, and the
WHO-style axial diameter measurement used for size control and stratification.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import EmptyMask, MaskSamplingError
from .geometry import deformed_blob
from .volume import LabelMap

SMALL_DIAMETER_MM = 20.0  # "small tumor" cutoff: diameter < 2 cm
DEFAULT_MIN_ORGAN_VOXELS = 200
MAX_SAMPLING_ATTEMPTS = 20


@dataclass(frozen=True)
class SizeSpec:
    """Requested tumor diameter range in mm; category "small" caps it at 2 cm."""

    diameter_mm: tuple[float, float] = (5.0, 15.0)
    category: str = "any"  # "small" | "any"

    def __post_init__(self):
        lo, hi = self.diameter_mm
        if not 0 < lo < hi:
            raise ValueError(f"diameter range must satisfy 0 < lo < hi, got ({lo}, {hi})")
        if self.category not in ("small", "any"):
            raise ValueError(f"category must be 'small' or 'any', got {self.category!r}")
        if self.category == "small" and hi > SMALL_DIAMETER_MM:
            raise ValueError(f"category 'small' requires hi <= {SMALL_DIAMETER_MM} mm, got {hi}")


@dataclass(frozen=True)
class TumorMask:
    """Binary placement mask: single connected component inside the organ."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    diameter_mm: float
    placement_seed: int = 0

    def __post_init__(self):
        arr = np.asarray(self.data).astype(bool)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if arr.ndim != 3:
            raise ValueError(f"mask must be 3-D, got shape {arr.shape}")
        if not arr.any():
            raise EmptyMask("tumor mask has no voxels")
        _, n = ndimage.label(arr)
        if n != 1:
            raise ValueError(f"tumor mask must be a single connected component, found {n}")
        if not self.diameter_mm > 0:
            raise ValueError(f"diameter must be > 0, got {self.diameter_mm}")

    @property
    def voxel_count(self) -> int:
        return int(self.data.sum())


def measure_diameter(mask, spacing=None) -> float:
    """Maximum axial in-plane extent of a mask, in mm.

    Convention: slices run along axis 0; within each slice the extent is the
    largest center-to-center distance between mask voxels plus one in-plane
    voxel (the larger of the two in-plane spacings), so a single voxel at
    spacing (2, 2, 2) measures 2.0 mm.
    """
    if isinstance(mask, (TumorMask, LabelMap)):
        data, spacing = mask.data, mask.spacing
    else:
        if spacing is None:
            raise ValueError("spacing is required when measuring a bare array")
        data = np.asarray(mask)
    data = data.astype(bool)
    if not data.any():
        raise EmptyMask("cannot measure an empty mask")

    sy, sx = float(spacing[1]), float(spacing[2])
    voxel_extent = max(sy, sx)
    best = 0.0
    for z in np.unique(np.nonzero(data)[0]):
        coords = np.argwhere(data[z]).astype(np.float64)
        coords[:, 0] *= sy
        coords[:, 1] *= sx
        if len(coords) > 1:
            diff = coords[:, None, :] - coords[None, :, :]
            best = max(best, float(np.sqrt((diff**2).sum(-1)).max()))
    return best + voxel_extent


def sample_tumor_mask(
    organ: LabelMap,
    spec: SizeSpec = SizeSpec(),
    seed: int = 0,
    min_organ_voxels: int = DEFAULT_MIN_ORGAN_VOXELS,
) -> TumorMask:
    """Draw a placement mask of spec-controlled size inside the organ.

    An ellipsoid with random semi-axes is deformed by thresholded smooth noise
    and intersected with the organ eroded by one voxel. Resampled until the
    measured diameter lands within the spec range, with one in-plane voxel of
    slack on each end. Deterministic for a given (organ, spec, seed).
    """
    support = organ.data > 0
    if not support.any():
        raise MaskSamplingError(f"case {organ.id!r}: organ label is empty")
    eroded = ndimage.binary_erosion(support, iterations=1)
    if eroded.sum() < min_organ_voxels:
        raise MaskSamplingError(
            f"case {organ.id!r}: organ has {int(eroded.sum())} interior voxels, "
            f"needs >= {min_organ_voxels}"
        )

    spacing = np.asarray(organ.spacing, dtype=np.float64)
    inplane = max(spacing[1], spacing[2])
    lo, hi = spec.diameter_mm
    lo_ok, hi_ok = lo - inplane, hi + inplane
    coords = np.argwhere(eroded)
    rng = np.random.default_rng(seed)

    for _ in range(MAX_SAMPLING_ATTEMPTS):
        target = rng.uniform(lo, hi)
        # in-plane semi-axis sized so that c2c extent + one voxel ~ target
        a_mm = max((target - inplane) / 2.0, spacing.max() / 2.0)
        b_mm = a_mm * rng.uniform(0.7, 1.0)
        c_mm = a_mm * rng.uniform(0.5, 1.0)
        if rng.random() < 0.5:
            a_mm, b_mm = b_mm, a_mm
        semi_axes = np.maximum(np.array([c_mm, a_mm, b_mm]) / spacing, 0.5)
        center = coords[rng.integers(0, len(coords))].astype(np.float64)
        blob = deformed_blob(rng, support.shape, center, semi_axes, deform=0.2)
        blob &= eroded
        if not blob.any():
            continue
        labels, n = ndimage.label(blob)
        if n > 1:
            keep = labels[tuple(center.astype(int))]
            blob = labels == (keep if keep > 0 else 1)
        measured = measure_diameter(blob, organ.spacing)
        if lo_ok <= measured <= hi_ok:
            return TumorMask(blob, organ.spacing, measured, placement_seed=seed)

    raise MaskSamplingError(
        f"case {organ.id!r}: no mask with diameter in [{lo}, {hi}] mm "
        f"after {MAX_SAMPLING_ATTEMPTS} attempts"
    )
