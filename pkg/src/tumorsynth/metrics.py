"""Quantitative evaluation: Dice, confusion-count metrics, overlap-based
instance detection, size stratification, and k-fold split plumbing.

All metric values are percentages in [0, 100]. A 0/0 ratio is reported as
None (an explicit undefined marker) and excluded from averages, because small
phantom sets can lack a class entirely.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from .errors import ShapeMismatch
from .masks import SMALL_DIAMETER_MM, measure_diameter


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def n_total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn
        )


@dataclass(frozen=True)
class MetricsReport:
    """Percent metrics; None marks an undefined (0/0) value."""

    sensitivity: float | None = None
    specificity: float | None = None
    accuracy: float | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    dice: float | None = None

    def as_dict(self) -> dict:
        return asdict(self)


def _ratio_pct(num: int, den: int) -> float | None:
    return None if den == 0 else 100.0 * num / den


def confusion_metrics(c: ConfusionCounts) -> MetricsReport:
    """Sensitivity, specificity, accuracy, precision, recall and F1 from counts."""
    precision = _ratio_pct(c.tp, c.tp + c.fp)
    recall = _ratio_pct(c.tp, c.tp + c.fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None  # 0/0 (or an undefined operand) stays undefined
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return MetricsReport(
        sensitivity=_ratio_pct(c.tp, c.tp + c.fn),
        specificity=_ratio_pct(c.tn, c.tn + c.fp),
        accuracy=_ratio_pct(c.tp + c.tn, c.n_total),
        precision=precision,
        recall=recall,
        f1=f1,
    )


def dice(pre, gro) -> float:
    """Overlap score 2|A∩B| / (|A|+|B|) in percent; 100 when both are empty."""
    a = np.asarray(getattr(pre, "data", pre)).astype(bool)
    b = np.asarray(getattr(gro, "data", gro)).astype(bool)
    if a.shape != b.shape:
        raise ShapeMismatch(f"prediction {a.shape} vs ground truth {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 100.0
    return 200.0 * int(np.logical_and(a, b).sum()) / total


def connected_instances(labels) -> list[np.ndarray]:
    """Split a binary map into face-connected components (as boolean masks)."""
    arr = np.asarray(getattr(labels, "data", labels)).astype(bool)
    lab, n = ndimage.label(arr)
    return [(lab == i) for i in range(1, n + 1)]


def detect_instances(pred, gt_instances: Sequence) -> list[bool]:
    """Instance hit flags: an instance counts as detected iff the prediction
    overlaps it in at least one voxel."""
    p = np.asarray(getattr(pred, "data", pred)).astype(bool)
    masks = [np.asarray(getattr(m, "data", m)).astype(bool) for m in gt_instances]
    for m in masks:
        if m.shape != p.shape:
            raise ShapeMismatch(f"instance {m.shape} vs prediction {p.shape}")
    if len(masks) > 1:
        stacked = np.zeros_like(p, dtype=np.int32)
        for m in masks:
            stacked += m
        if (stacked > 1).any():
            raise ValueError("ground-truth instances overlap; they must be disjoint")
    return [bool(np.logical_and(p, m).any()) for m in masks]


def volume_detection_counts(pred, gt) -> ConfusionCounts:
    """Volume-level detection: positive means any tumor voxel in the volume."""
    p = np.asarray(getattr(pred, "data", pred)).astype(bool).any()
    g = np.asarray(getattr(gt, "data", gt)).astype(bool).any()
    return ConfusionCounts(tp=int(p and g), tn=int(not p and not g), fp=int(p and not g), fn=int(not p and g))


def stratify_small(
    gt_instances: Sequence,
    spacing,
    threshold_mm: float = SMALL_DIAMETER_MM,
) -> dict[str, list[int]]:
    """Partition instance indices by measured diameter: small < threshold <= large."""
    small, large = [], []
    for i, inst in enumerate(gt_instances):
        d = measure_diameter(inst, spacing)
        (small if d < threshold_mm else large).append(i)
    return {"small": small, "large": large}


def kfold_split(case_ids: Sequence[str], k: int, seed: int = 0) -> list[list[str]]:
    """Deterministic near-equal partition into k disjoint folds."""
    ids = list(case_ids)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > len(ids):
        raise ValueError(f"k={k} exceeds the {len(ids)} available cases")
    order = np.random.default_rng(seed).permutation(len(ids))
    folds: list[list[str]] = [[] for _ in range(k)]
    for pos, idx in enumerate(order):
        folds[pos % k].append(ids[int(idx)])
    return folds


def mean_defined(values: Sequence[float | None]) -> float | None:
    """Average ignoring undefined markers; None when nothing is defined."""
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None
