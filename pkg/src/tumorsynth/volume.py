"""Volume and label-map data types, HU windowing and patch cropping.

Intensities live in two domains: raw Hounsfield units as loaded, and the
normalized [0, 1] domain after `clip_and_normalize`. Everything downstream
of preprocessing (synthesis, training, gating) expects the normalized domain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteVolume, ShapeMismatch

log = logging.getLogger(__name__)

# Label conventions for combined organ/tumor maps.
BACKGROUND_LABEL = 0
ORGAN_LABEL = 1
TUMOR_LABEL = 2

CROP_POLICIES = ("random", "tumor-centered", "organ-centered")


@dataclass(frozen=True)
class Volume:
    """A dense 3-D scalar grid with voxel spacing in mm and a case id."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    id: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float32)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError(f"volume must be 3-D with all dims >= 1, got shape {arr.shape}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing components must be > 0, got {self.spacing}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class LabelMap:
    """Integer voxel map paired with a Volume: 0 background, k = class k."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    id: str = ""
    class_set: tuple[int, ...] = (BACKGROUND_LABEL, ORGAN_LABEL, TUMOR_LABEL)

    def __post_init__(self):
        arr = np.asarray(self.data)
        if not np.issubdtype(arr.dtype, np.integer) and not arr.dtype == bool:
            raise ValueError(f"label map must be integer or bool, got dtype {arr.dtype}")
        arr = arr.astype(np.uint8)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "class_set", tuple(int(c) for c in self.class_set))
        if arr.ndim != 3:
            raise ValueError(f"label map must be 3-D, got shape {arr.shape}")
        extra = set(np.unique(arr)) - set(self.class_set)
        if extra:
            raise ValueError(f"label values {sorted(extra)} outside declared class set {self.class_set}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class HuWindow:
    """Clinical HU window (lo, hi) mapped onto [0, 1]."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"window requires lo < hi, got ({self.lo}, {self.hi})")


# Windows used for the two body regions this pipeline targets.
ABDOMEN_WINDOW = HuWindow(-175.0, 250.0)
CHEST_WINDOW = HuWindow(-1000.0, 500.0)


def check_same_shape(a, b, what: str = "arrays"):
    if tuple(np.shape(a)) != tuple(np.shape(b)):
        raise ShapeMismatch(f"{what} differ in shape: {np.shape(a)} vs {np.shape(b)}")


def clip_and_normalize(v: Volume, w: HuWindow) -> Volume:
    """Clamp raw HU into the window and map it linearly onto [0, 1]."""
    if not np.isfinite(v.data).all():
        bad = int(np.size(v.data) - np.isfinite(v.data).sum())
        raise NonFiniteVolume(f"case {v.id!r}: {bad} non-finite voxel(s), rejecting")
    out = (np.clip(v.data, w.lo, w.hi) - w.lo) / (w.hi - w.lo)
    return Volume(out.astype(np.float32), v.spacing, v.id)


def require_normalized(v: Volume):
    """Guard for operations defined only on the [0, 1] intensity domain."""
    lo, hi = float(v.data.min()), float(v.data.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"case {v.id!r}: expected intensities in [0, 1], got [{lo:.3g}, {hi:.3g}]")


def merge_labels(organ: LabelMap, tumor: LabelMap | None) -> LabelMap:
    """Combine an organ map and an optional binary tumor map into one map."""
    data = (organ.data > 0).astype(np.uint8) * ORGAN_LABEL
    if tumor is not None:
        check_same_shape(organ.data, tumor.data, "organ and tumor labels")
        data[tumor.data > 0] = TUMOR_LABEL
    return LabelMap(data, organ.spacing, organ.id)


def split_labels(combined: LabelMap) -> tuple[LabelMap, LabelMap]:
    """Invert merge_labels: (organ incl. tumor voxels, binary tumor)."""
    organ = (combined.data >= ORGAN_LABEL).astype(np.uint8)
    tumor = (combined.data == TUMOR_LABEL).astype(np.uint8)
    return (
        LabelMap(organ, combined.spacing, combined.id),
        LabelMap(tumor, combined.spacing, combined.id),
    )


def _pad_to(arr: np.ndarray, size, pad_value):
    """Center-pad arr so every dim is at least `size`."""
    pads = []
    for dim, want in zip(arr.shape, size):
        missing = max(0, want - dim)
        pads.append((missing // 2, missing - missing // 2))
    if any(p != (0, 0) for p in pads):
        arr = np.pad(arr, pads, mode="constant", constant_values=pad_value)
    return arr


def crop_patch(
    v: Volume,
    l: LabelMap,
    size: tuple[int, int, int],
    policy: str = "random",
    seed: int = 0,
) -> tuple[Volume, LabelMap]:
    """Cut a paired (volume, labels) patch of `size` voxels.

    Policies: "random" picks a uniform corner; "tumor-centered" centers on a
    random tumor voxel; "organ-centered" on a random organ voxel. Volumes
    smaller than the patch are padded with the window-low intensity (0.0).
    Deterministic for a given seed. Falls back tumor-centered -> organ-centered
    (and organ-centered -> random on empty labels) with a logged warning.
    """
    if policy not in CROP_POLICIES:
        raise ValueError(f"unknown crop policy {policy!r}, expected one of {CROP_POLICIES}")
    check_same_shape(v.data, l.data, "volume and labels")
    size = tuple(int(s) for s in size)

    data = _pad_to(v.data, size, 0.0)
    labels = _pad_to(l.data, size, BACKGROUND_LABEL)
    rng = np.random.default_rng(seed)

    if policy == "tumor-centered" and not (labels == TUMOR_LABEL).any():
        log.warning("case %r: tumor-centered crop requested but no tumor voxels; using organ-centered", v.id)
        policy = "organ-centered"
    if policy == "organ-centered" and not (labels >= ORGAN_LABEL).any():
        log.warning("case %r: organ-centered crop requested but no organ voxels; using random", v.id)
        policy = "random"

    if policy == "random":
        corner = [rng.integers(0, dim - want + 1) for dim, want in zip(labels.shape, size)]
    else:
        wanted = TUMOR_LABEL if policy == "tumor-centered" else ORGAN_LABEL
        coords = np.argwhere(labels >= wanted)
        center = coords[rng.integers(0, len(coords))]
        corner = [
            int(np.clip(c - want // 2, 0, dim - want))
            for c, want, dim in zip(center, size, labels.shape)
        ]

    sl = tuple(slice(int(c), int(c) + want) for c, want in zip(corner, size))
    return (
        Volume(data[sl].copy(), v.spacing, v.id),
        LabelMap(labels[sl].copy(), l.spacing, l.id, class_set=l.class_set),
    )
