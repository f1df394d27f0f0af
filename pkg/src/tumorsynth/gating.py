"""Quality gate for synthetic tumors: the proportion of a mask the frozen
segmentation discriminator recognizes as tumor, and the accept/reject rule.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import EmptyMask
from .volume import Volume, check_same_shape

DEFAULT_THRESHOLD = 0.7  # ablation optimum among {0.5, 0.7, 0.9}
PROB_BINARIZATION = 0.5


@dataclass(frozen=True)
class QualityVerdict:
    """Per-case gate outcome."""

    case_id: str
    proportion_p: float
    threshold_t: float
    passed: bool
    mask_voxels: int

    def __post_init__(self):
        if not 0.0 <= self.proportion_p <= 1.0:
            raise ValueError(f"proportion must be in [0, 1], got {self.proportion_p}")
        if not 0.0 < self.threshold_t <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold_t}")
        if self.passed != (self.proportion_p >= self.threshold_t):
            raise ValueError("passed flag inconsistent with proportion >= threshold")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def proportion(probs, mask, bin_thresh: float = PROB_BINARIZATION) -> float:
    """Fraction of mask voxels the discriminator segments as tumor."""
    p = np.asarray(getattr(probs, "data", probs))
    m = np.asarray(getattr(mask, "data", mask)).astype(bool)
    check_same_shape(p, m, "probability map and mask")
    total = int(m.sum())
    if total == 0:
        raise EmptyMask("proportion is undefined on an empty mask")
    segmented = int(np.count_nonzero(p[m] >= bin_thresh))
    return segmented / total


def gate(
    x: Volume,
    x_hat: Volume,
    probs,
    mask,
    threshold_t: float = DEFAULT_THRESHOLD,
    bin_thresh: float = PROB_BINARIZATION,
) -> tuple[Volume, QualityVerdict]:
    """Accept the synthetic volume iff its segmented proportion meets T.

    Passing cases return x_hat (the mask becomes a tumor training label);
    failing cases return the original x, to be consumed as a tumor-free image.
    """
    check_same_shape(x.data, x_hat.data, "original and synthetic volumes")
    m = np.asarray(getattr(mask, "data", mask)).astype(bool)
    p = proportion(probs, m, bin_thresh)
    passed = p >= threshold_t
    verdict = QualityVerdict(
        case_id=x.id,
        proportion_p=p,
        threshold_t=threshold_t,
        passed=passed,
        mask_voxels=int(m.sum()),
    )
    return (x_hat if passed else x), verdict
