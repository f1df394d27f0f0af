"""Downstream tumor-segmentation training with online synthetic augmentation,
plus sliding-window inference and case-set evaluation.

Synthetic cases are produced on the fly (never written to disk), gated by the
frozen stage-1 segmenter, and mixed into batches at a configurable ratio;
failed-gate cases are consumed as tumor-free images.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import metrics as M
from .errors import MaskSamplingError
from .gating import DEFAULT_THRESHOLD, PROB_BINARIZATION, QualityVerdict, gate
from .masks import SMALL_DIAMETER_MM, SizeSpec, sample_tumor_mask
from .networks import GenNet, SegNet
from .storage import load_case, load_labelmap, read_manifest
from .synthesis import GaussianFilterCfg, apply_synthesis_t
from .training import Case, fit_seg
from .volume import LabelMap, Volume, crop_patch, merge_labels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DatasetPool:
    """Labeled and unlabeled case pools with disjoint ids."""

    labeled: tuple[Case, ...]
    unlabeled: tuple[Case, ...]

    def __post_init__(self):
        object.__setattr__(self, "labeled", tuple(self.labeled))
        object.__setattr__(self, "unlabeled", tuple(self.unlabeled))
        ids_l = {c.id for c in self.labeled}
        ids_u = {c.id for c in self.unlabeled}
        overlap = ids_l & ids_u
        if overlap:
            raise ValueError(f"case ids present in both pools: {sorted(overlap)[:5]}")
        for c in self.unlabeled:
            if c.organ is None:
                raise ValueError(f"unlabeled case {c.id} lacks an organ label")

    @classmethod
    def from_directory(cls, root: str | Path) -> "DatasetPool":
        root = Path(root)
        records, _ = read_manifest(root)
        labeled, unlabeled = [], []
        for rec in records:
            image, organ, tumor = load_case(root, rec)
            case = Case(rec.id, image, organ, tumor)
            (labeled if rec.split == "labeled" else unlabeled).append(case)
        return cls(tuple(labeled), tuple(unlabeled))


@dataclass(frozen=True)
class SegTrainConfig:
    """Downstream training settings; defaults mirror the reference settings."""

    mix_ratio: tuple[int, int] = (1, 1)  # labeled : synthetic per batch
    lr: float = 3e-4
    batch: int = 4
    epochs: int = 100
    schedule: str = "cosine"
    seed: int = 0
    threshold_t: float = DEFAULT_THRESHOLD
    patch_size: tuple[int, int, int] = (96, 96, 96)
    steps_per_epoch: int = 25
    base_channels: int = 8
    size_spec: SizeSpec = SizeSpec((5.0, 15.0))
    gaussian: GaussianFilterCfg = GaussianFilterCfg()
    bin_thresh: float = PROB_BINARIZATION
    min_organ_voxels: int = 100
    # alternative gate semantics: drop failed cases instead of consuming them
    # as tumor-free images
    drop_failed: bool = False

    def __post_init__(self):
        l, s = self.mix_ratio
        if l < 0 or s < 0 or (l == 0 and s == 0):
            raise ValueError(f"mix ratio components must be >= 0 and not both 0, got {self.mix_ratio}")

    @property
    def synth_per_batch(self) -> int:
        l, s = self.mix_ratio
        return int(round(self.batch * s / (l + s)))


def _pad_to_multiple(data: np.ndarray, multiple: int = 4) -> tuple[np.ndarray, tuple]:
    pads = []
    for dim in data.shape:
        want = (-dim) % multiple
        pads.append((0, want))
    if any(p[1] for p in pads):
        data = np.pad(data, pads, mode="constant", constant_values=0.0)
    return data, tuple(pads)


def _forward_probs(model: SegNet, data: np.ndarray) -> np.ndarray:
    """Full-volume probabilities, transparently padding to the net's stride."""
    padded, pads = _pad_to_multiple(data.astype(np.float32))
    probs = model.predict_probs(padded).numpy()
    slices = tuple(slice(0, dim) for dim in data.shape)
    return probs[slices]


def _forward_raw(model: GenNet, data: np.ndarray) -> np.ndarray:
    padded, pads = _pad_to_multiple(data.astype(np.float32))
    with torch.no_grad():
        raw = model(torch.from_numpy(padded)[None, None])[0, 0].numpy()
    slices = tuple(slice(0, dim) for dim in data.shape)
    return raw[slices]


def synthesize_case(
    case: Case,
    generator: GenNet,
    seg_model: SegNet,
    threshold_t: float,
    mask_seed: int,
    size_spec: SizeSpec = SizeSpec((5.0, 15.0)),
    gaussian: GaussianFilterCfg = GaussianFilterCfg(),
    bin_thresh: float = PROB_BINARIZATION,
    min_organ_voxels: int = 100,
) -> tuple[Volume, LabelMap, QualityVerdict]:
    """Sample a mask, synthesize, and gate one unlabeled case in memory."""
    mask = sample_tumor_mask(case.organ, size_spec, seed=mask_seed, min_organ_voxels=min_organ_voxels)
    x_t = torch.from_numpy(np.ascontiguousarray(case.image.data))
    raw = torch.from_numpy(_forward_raw(generator, case.image.data))
    m_t = torch.from_numpy(mask.data)
    x_hat_t = apply_synthesis_t(x_t, m_t, raw, gaussian)
    x_hat = Volume(x_hat_t.numpy(), case.image.spacing, case.id)
    probs = _forward_probs(seg_model, x_hat.data)
    chosen, verdict = gate(case.image, x_hat, probs, mask.data, threshold_t, bin_thresh)
    label_data = mask.data.astype(np.uint8) if verdict.passed else np.zeros(case.image.shape, np.uint8)
    label = LabelMap(label_data, case.image.spacing, case.id)
    return chosen, label, verdict


def synth_case_stream(
    unlabeled,
    generator: GenNet,
    seg_model: SegNet,
    threshold_t: float = DEFAULT_THRESHOLD,
    seed: int = 0,
    size_spec: SizeSpec = SizeSpec((5.0, 15.0)),
    gaussian: GaussianFilterCfg = GaussianFilterCfg(),
    bin_thresh: float = PROB_BINARIZATION,
    min_organ_voxels: int = 100,
    count: int | None = None,
    drop_failed: bool = False,
):
    """Online synthesis stream over an unlabeled pool.

    Yields (volume, tumor labels, verdict) per drawn case: the synthetic
    volume with its mask as labels on a gate pass, or the original volume
    with empty labels on a fail (with drop_failed, failing draws are skipped
    entirely). Draws cycle through seeded shuffles of the pool. Nothing is
    ever written to disk. Cases with empty organ labels or failed mask
    placement are skipped with a log entry.
    """
    cases = list(unlabeled.unlabeled if isinstance(unlabeled, DatasetPool) else unlabeled)
    if not cases:
        return
    rng = np.random.default_rng(seed)
    emitted = 0
    skipped_in_a_row = 0
    skip_budget = max(20, 5 * len(cases))
    while count is None or emitted < count:
        for idx in rng.permutation(len(cases)):
            if count is not None and emitted >= count:
                return
            if skipped_in_a_row >= skip_budget:
                log.warning("stream ends: %d consecutive draws without an emission", skipped_in_a_row)
                return
            case = cases[int(idx)]
            mask_seed = int(rng.integers(2**63))
            if case.organ is None or not case.organ.data.any():
                log.warning("case %s skipped: empty organ label", case.id)
                skipped_in_a_row += 1
                continue
            try:
                emission = synthesize_case(
                    case, generator, seg_model, threshold_t, mask_seed,
                    size_spec, gaussian, bin_thresh, min_organ_voxels,
                )
            except MaskSamplingError as e:
                log.warning("case %s skipped: %s", case.id, e)
                skipped_in_a_row += 1
                continue
            if drop_failed and not emission[2].passed:
                log.info("case %s dropped by gate (P=%.3f)", case.id, emission[2].proportion_p)
                skipped_in_a_row += 1
                continue
            yield emission
            emitted += 1
            skipped_in_a_row = 0


def train_segmentation(
    pool: DatasetPool,
    generator: GenNet | None,
    seg_model: SegNet | None,
    cfg: SegTrainConfig,
) -> tuple[SegNet, list[dict]]:
    """Train the final segmenter on labeled plus online-synthesized batches.

    With an empty unlabeled pool or a (l, 0) mix ratio this degenerates to
    baseline training and reproduces the stage-1 trainer bit-for-bit under
    the same seed.
    """
    if not pool.labeled:
        raise ValueError("labeled pool is empty")
    n_synth = cfg.synth_per_batch if pool.unlabeled else 0
    synth_fetch = None
    if n_synth > 0:
        if generator is None or seg_model is None:
            raise ValueError("synthetic augmentation needs a trained generator and gate segmenter")
        organ_by_id = {c.id: c.organ for c in pool.unlabeled}
        stream = synth_case_stream(
            pool,
            generator,
            seg_model,
            threshold_t=cfg.threshold_t,
            seed=cfg.seed + 1,
            size_spec=cfg.size_spec,
            gaussian=cfg.gaussian,
            bin_thresh=cfg.bin_thresh,
            min_organ_voxels=cfg.min_organ_voxels,
            drop_failed=cfg.drop_failed,
        )

        def synth_fetch(n, rng):
            pairs = []
            for _ in range(n):
                volume, label, verdict = next(stream)
                combined = merge_labels(organ_by_id[volume.id], label)
                policy = "tumor-centered" if verdict.passed else "organ-centered"
                vol_c, lab_c = crop_patch(
                    volume, combined, cfg.patch_size, policy, seed=int(rng.integers(2**63))
                )
                pairs.append((vol_c.data, (lab_c.data == 2).astype(np.float32)))
            return pairs

    return fit_seg(
        list(pool.labeled),
        lr=cfg.lr,
        batch=cfg.batch,
        epochs=cfg.epochs,
        steps_per_epoch=cfg.steps_per_epoch,
        patch_size=cfg.patch_size,
        base_channels=cfg.base_channels,
        seed=cfg.seed,
        schedule=cfg.schedule,
        synth_fetch=synth_fetch,
        n_synth_per_batch=n_synth,
    )


def infer(
    model: SegNet,
    volume: Volume,
    window: tuple[int, int, int] = (96, 96, 96),
    overlap: float = 0.5,
    bin_thresh: float = PROB_BINARIZATION,
) -> tuple[LabelMap, Volume]:
    """Sliding-window inference with uniform overlap averaging.

    Returns (binary labels at bin_thresh, probability volume). The volume is
    zero-padded up to the window when smaller.
    """
    window = tuple(int(w) for w in window)
    if any(w < 1 or w % 4 for w in window):
        raise ValueError(f"window dims must be positive multiples of 4, got {window}")
    if not 0.0 <= overlap < 1.0:
        raise ValueError(f"overlap must be in [0, 1), got {overlap}")

    data = volume.data
    padded = np.pad(
        data,
        [(0, max(0, w - s)) for s, w in zip(data.shape, window)],
        mode="constant",
        constant_values=0.0,
    )
    starts = []
    for dim, w in zip(padded.shape, window):
        stride = max(1, int(round(w * (1.0 - overlap))))
        axis_starts = sorted({min(s, dim - w) for s in range(0, dim, stride)} | {dim - w})
        starts.append([s for s in axis_starts if s >= 0])

    probs = np.zeros(padded.shape, dtype=np.float64)
    counts = np.zeros(padded.shape, dtype=np.float64)
    model.eval()
    for z in starts[0]:
        for y in starts[1]:
            for x in starts[2]:
                sl = (slice(z, z + window[0]), slice(y, y + window[1]), slice(x, x + window[2]))
                tile = model.predict_probs(padded[sl]).numpy()
                probs[sl] += tile
                counts[sl] += 1.0
    probs /= counts
    crop = tuple(slice(0, s) for s in data.shape)
    prob_vol = Volume(probs[crop].astype(np.float32), volume.spacing, volume.id)
    labels = LabelMap((prob_vol.data >= bin_thresh).astype(np.uint8), volume.spacing, volume.id)
    return labels, prob_vol


def evaluate_cases(
    model: SegNet,
    cases: list[Case],
    window: tuple[int, int, int],
    overlap: float = 0.5,
    small_threshold_mm: float = SMALL_DIAMETER_MM,
) -> dict:
    """Segmentation + detection report over held-out cases with tumor labels."""
    pairs = []
    for case in sorted(cases, key=lambda c: c.id):
        pred, _ = infer(model, case.image, window, overlap)
        pairs.append((case.id, pred, case.tumor))
    return evaluate_label_pairs(pairs, small_threshold_mm)


def evaluate_label_pairs(
    pairs: list[tuple[str, LabelMap, LabelMap]],
    small_threshold_mm: float = SMALL_DIAMETER_MM,
) -> dict:
    """Deterministic metric report from (id, prediction, ground truth) rows."""
    per_case = []
    volume_counts = M.ConfusionCounts()
    inst_total = inst_hit = 0
    bucket_totals = {"small": 0, "large": 0}
    bucket_hits = {"small": 0, "large": 0}
    for case_id, pred, gt in sorted(pairs, key=lambda p: p[0]):
        d = M.dice(pred, gt)
        volume_counts = volume_counts + M.volume_detection_counts(pred, gt)
        instances = M.connected_instances(gt)
        hits = M.detect_instances(pred, instances)
        strata = M.stratify_small(instances, gt.spacing, small_threshold_mm)
        inst_total += len(instances)
        inst_hit += sum(hits)
        for name in ("small", "large"):
            bucket_totals[name] += len(strata[name])
            bucket_hits[name] += sum(hits[i] for i in strata[name])
        per_case.append({"id": case_id, "dice": d, "instances": len(instances), "detected": int(sum(hits))})

    volume_report = M.confusion_metrics(volume_counts)
    def _pct(num, den):
        return None if den == 0 else 100.0 * num / den

    return {
        "cases": per_case,
        "mean_dice": M.mean_defined([row["dice"] for row in per_case]),
        "volume_detection": {
            "counts": {"tp": volume_counts.tp, "tn": volume_counts.tn,
                       "fp": volume_counts.fp, "fn": volume_counts.fn},
            **volume_report.as_dict(),
        },
        "instance_detection": {
            "total": inst_total,
            "detected": inst_hit,
            "sensitivity": _pct(inst_hit, inst_total),
            "small": {
                "total": bucket_totals["small"],
                "detected": bucket_hits["small"],
                "sensitivity": _pct(bucket_hits["small"], bucket_totals["small"]),
            },
            "large": {
                "total": bucket_totals["large"],
                "detected": bucket_hits["large"],
                "sensitivity": _pct(bucket_hits["large"], bucket_totals["large"]),
            },
            "small_threshold_mm": small_threshold_mm,
        },
    }


def evaluate_label_dirs(pred_dir: str | Path, gt_dir: str | Path,
                        small_threshold_mm: float = SMALL_DIAMETER_MM) -> dict:
    """Compare two directories of saved label maps matched by file name."""
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pairs = []
    for gt_path in sorted(gt_dir.glob("*.seg")):
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise FileNotFoundError(f"no prediction for {gt_path.name} in {pred_dir}")
        pairs.append((gt_path.stem, load_labelmap(pred_path), load_labelmap(gt_path)))
    if not pairs:
        raise FileNotFoundError(f"no .seg label maps found in {gt_dir}")
    return evaluate_label_pairs(pairs, small_threshold_mm)
