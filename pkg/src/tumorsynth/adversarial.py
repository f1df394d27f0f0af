"""Adversarial synthesis training.

Stage 1 trains the baseline tumor segmenter S on labeled data. Stage 2 trains
the generator G against the frozen S (segmentation loss on mask voxels) and a
real-vs-synthetic classifier C, alternating one generator step with one
classifier step. S is never updated in stage 2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .errors import EmptyMask, MaskSamplingError, TrainingDiverged
from .masks import SizeSpec, sample_tumor_mask
from .networks import ClsNet, GenNet, SegNet
from .synthesis import GaussianFilterCfg, apply_synthesis_t, gaussian_blur_t
from .training import Case, cosine_factor, fit_seg, labeled_patch
from .volume import LabelMap, Volume, crop_patch, merge_labels

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdvConfig:
    """Hyperparameters for both training stages.

    Defaults mirror the reference training settings (AdamW, batch 4, cosine
    schedule, 100 epochs, synthesis lr 1e-4, segmentation lr 3e-4, classifier
    weight 0.1); patch size and network width are desk-scale configurable.
    """

    lambda_cls: float = 0.1
    lr_synthesis: float = 1e-4
    lr_segmentation: float = 3e-4
    batch: int = 4
    epochs: int = 100
    schedule: str = "cosine"
    seed: int = 0
    patch_size: tuple[int, int, int] = (96, 96, 96)
    steps_per_epoch: int = 25
    base_channels: int = 8
    size_spec: SizeSpec = SizeSpec((5.0, 15.0))
    gaussian: GaussianFilterCfg = GaussianFilterCfg()
    threshold_t: float = 0.7
    min_organ_voxels: int = 100

    def __post_init__(self):
        if self.lambda_cls < 0:
            raise ValueError("lambda_cls must be >= 0")
        if self.lr_synthesis <= 0 or self.lr_segmentation <= 0:
            raise ValueError("learning rates must be > 0")
        if self.schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True)
class LossBundle:
    """Scalar view of one adversarial step's losses."""

    l_seg: float
    l_cls: float
    l_adv: float

    def __post_init__(self):
        for name in ("l_seg", "l_cls", "l_adv"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} is not finite")
        if not 0.0 <= self.l_seg <= 1.0:
            raise ValueError(f"l_seg must lie in [0, 1], got {self.l_seg}")


def compute_seg_loss(probs, mask) -> float:
    """Mean |1 - S(x_hat)| over mask voxels (the stage-2 segmentation loss)."""
    p = np.asarray(getattr(probs, "data", probs), dtype=np.float64)
    m = np.asarray(getattr(mask, "data", mask)).astype(bool)
    if p.shape != m.shape:
        raise ValueError(f"probability map {p.shape} vs mask {m.shape}")
    if not m.any():
        raise EmptyMask("segmentation loss is undefined on an empty mask")
    return float(np.abs(1.0 - p[m]).mean())


def seg_loss_t(probs: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Batched differentiable form of compute_seg_loss; ignores empty masks."""
    dims = tuple(range(1, probs.ndim))
    m = mask.to(probs.dtype)
    per_case = (m * (1.0 - probs).abs()).sum(dims) / m.sum(dims).clamp_min(1.0)
    valid = m.sum(dims) > 0
    if not bool(valid.any()):
        raise EmptyMask("all masks in the batch are empty")
    return per_case[valid].mean()


def generator_losses(
    x_hat: torch.Tensor,
    mask: torch.Tensor,
    seg_model: SegNet,
    cls_model: ClsNet,
    lambda_cls: float,
) -> dict[str, torch.Tensor]:
    """Generator-step losses: fool S on mask voxels and C on patch realness."""
    seg_probs = torch.sigmoid(seg_model(x_hat))
    l_seg = seg_loss_t(seg_probs, mask)
    logits = cls_model(x_hat)
    l_cls = F.binary_cross_entropy_with_logits(logits, torch.ones_like(logits))
    return {"l_seg": l_seg, "l_cls": l_cls, "l_adv": l_seg + lambda_cls * l_cls}


def classifier_loss(cls_model: ClsNet, real: torch.Tensor, fake: torch.Tensor) -> torch.Tensor:
    """Discriminator-step loss for C: real patches -> 1, synthetic -> 0."""
    real_logits = cls_model(real)
    fake_logits = cls_model(fake)
    return 0.5 * (
        F.binary_cross_entropy_with_logits(real_logits, torch.ones_like(real_logits))
        + F.binary_cross_entropy_with_logits(fake_logits, torch.zeros_like(fake_logits))
    )


def compute_adv_losses(
    x_hat: torch.Tensor,
    mask: torch.Tensor,
    seg_model: SegNet,
    cls_model: ClsNet,
    real_batch: torch.Tensor | None,
    cfg: AdvConfig,
) -> tuple[LossBundle, float | None]:
    """Scalar loss view for logging/verification (no gradients retained).

    Returns the generator-step bundle plus the classifier-update loss, or None
    for the latter when the batch lacks real patches (the C step is skipped).
    """
    with torch.no_grad():
        parts = generator_losses(x_hat, mask, seg_model, cls_model, cfg.lambda_cls)
        bundle = LossBundle(*(float(parts[k]) for k in ("l_seg", "l_cls", "l_adv")))
        if real_batch is None or real_batch.shape[0] == 0:
            log.info("classifier update skipped: no real patches in batch")
            return bundle, None
        return bundle, float(classifier_loss(cls_model, real_batch, x_hat))


def _as_cases(labeled) -> list[Case]:
    cases = []
    for i, item in enumerate(labeled):
        if isinstance(item, Case):
            cases.append(item)
        else:
            vol, tumor = item[0], item[-1]
            organ = item[1] if len(item) == 3 else None
            cases.append(Case(vol.id or f"case-{i}", vol, organ, tumor))
    return cases


def train_stage1(labeled, cfg: AdvConfig) -> tuple[SegNet, list[dict]]:
    """Train the baseline segmenter (Dice-CE) on labeled tumor cases."""
    cases = _as_cases(labeled)
    if not cases or not any(c.tumor is not None and c.tumor.data.any() for c in cases):
        raise ValueError("stage 1 needs at least one labeled case with tumor voxels")
    return fit_seg(
        cases,
        lr=cfg.lr_segmentation,
        batch=cfg.batch,
        epochs=cfg.epochs,
        steps_per_epoch=cfg.steps_per_epoch,
        patch_size=cfg.patch_size,
        base_channels=cfg.base_channels,
        seed=cfg.seed,
        schedule=cfg.schedule,
    )


def _organ_patch_with_mask(case: Case, cfg: AdvConfig, rng: np.random.Generator):
    """Organ-centered crop of an unlabeled case plus a sampled placement mask."""
    vol, labels = crop_patch(
        case.image,
        case.combined_labels(),
        cfg.patch_size,
        "organ-centered",
        seed=int(rng.integers(2**63)),
    )
    organ = LabelMap((labels.data > 0).astype(np.uint8), labels.spacing, case.id)
    mask = sample_tumor_mask(
        organ, cfg.size_spec, seed=int(rng.integers(2**63)), min_organ_voxels=cfg.min_organ_voxels
    )
    return vol.data, mask.data


def synthesis_batch(
    unlabeled_cases: list[Case],
    cfg: AdvConfig,
    rng: np.random.Generator,
    n: int,
    max_tries: int = 10,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Assemble n (image, mask) pairs for synthesis, retrying unlucky crops."""
    images, masks = [], []
    while len(images) < n:
        for _ in range(max_tries):
            case = unlabeled_cases[int(rng.integers(len(unlabeled_cases)))]
            try:
                img, msk = _organ_patch_with_mask(case, cfg, rng)
            except MaskSamplingError as e:
                log.debug("mask sampling retry: %s", e)
                continue
            images.append(img)
            masks.append(msk)
            break
        else:
            raise MaskSamplingError(
                f"could not place a tumor mask in {max_tries} attempts across cases"
            )
    x = torch.from_numpy(np.stack(images)).unsqueeze(1)
    m = torch.from_numpy(np.stack(masks).astype(np.float32)).unsqueeze(1)
    return x, m


def real_tumor_batch(
    labeled_cases: list[Case], cfg: AdvConfig, rng: np.random.Generator, n: int
) -> torch.Tensor | None:
    """Tumor-centered crops of real tumors for the classifier's real side."""
    with_tumor = [c for c in labeled_cases if c.tumor is not None and c.tumor.data.any()]
    if not with_tumor:
        return None
    crops = []
    for _ in range(n):
        case = with_tumor[int(rng.integers(len(with_tumor)))]
        vol, _ = crop_patch(
            case.image,
            case.combined_labels(),
            cfg.patch_size,
            "tumor-centered",
            seed=int(rng.integers(2**63)),
        )
        crops.append(vol.data)
    return torch.from_numpy(np.stack(crops)).unsqueeze(1)


def train_stage2(
    generator: GenNet,
    seg_model: SegNet,
    cls_model: ClsNet,
    labeled_pool,
    unlabeled_pool,
    cfg: AdvConfig,
) -> tuple[GenNet, list[dict]]:
    """Adversarially train G against frozen S and the classifier C.

    Alternates one generator step (minimize l_seg + lambda*l_cls with flipped
    C labels) with one classifier step (real vs detached synthetic). Logs
    per-epoch means plus per-step tuples, and the quality pass rate at
    cfg.threshold_t. Aborts via the divergence guard when l_seg stays above
    twice its first-epoch mean for 5 consecutive epochs.
    """
    labeled_cases = _as_cases(labeled_pool)
    unlabeled_cases = _as_cases(unlabeled_pool)
    if not labeled_cases or not unlabeled_cases:
        raise ValueError("stage 2 needs non-empty labeled and unlabeled pools")

    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    seg_model.eval()
    for p in seg_model.parameters():
        p.requires_grad_(False)
    opt_g = torch.optim.AdamW(generator.parameters(), lr=cfg.lr_synthesis)
    opt_c = torch.optim.AdamW(cls_model.parameters(), lr=cfg.lr_synthesis)

    logs: list[dict] = []
    baseline = None
    streak = 0
    for epoch in range(cfg.epochs):
        factor = cosine_factor(epoch, cfg.epochs) if cfg.schedule == "cosine" else 1.0
        for opt in (opt_g, opt_c):
            for group in opt.param_groups:
                group["lr"] = cfg.lr_synthesis * factor
        steps = []
        passed = total = 0
        skipped_cls = 0
        for _ in range(cfg.steps_per_epoch):
            x, m = synthesis_batch(unlabeled_cases, cfg, rng, cfg.batch)
            texture = gaussian_blur_t(x, cfg.gaussian)
            raw = generator(x)
            x_hat = apply_synthesis_t(x, m, raw, cfg.gaussian, texture=texture)
            parts = generator_losses(x_hat, m, seg_model, cls_model, cfg.lambda_cls)
            opt_g.zero_grad()
            parts["l_adv"].backward()
            opt_g.step()

            x_hat_d = x_hat.detach()
            real = real_tumor_batch(labeled_cases, cfg, rng, cfg.batch)
            if real is None:
                skipped_cls += 1
                log.info("epoch %d: classifier step skipped (no real tumor patches)", epoch)
                cls_d = None
            else:
                loss_c = classifier_loss(cls_model, real, x_hat_d)
                opt_c.zero_grad()
                loss_c.backward()
                opt_c.step()
                cls_d = float(loss_c.detach())

            with torch.no_grad():
                seg_probs = torch.sigmoid(seg_model(x_hat_d))
                hard = (seg_probs >= 0.5).float()
                per_case = (hard * m).sum(dim=(1, 2, 3, 4)) / m.sum(dim=(1, 2, 3, 4)).clamp_min(1.0)
                passed += int((per_case >= cfg.threshold_t).sum())
                total += int(m.shape[0])
            steps.append(
                {
                    "l_seg": float(parts["l_seg"].detach()),
                    "l_cls": float(parts["l_cls"].detach()),
                    "l_adv": float(parts["l_adv"].detach()),
                    "cls_d": cls_d,
                }
            )

        epoch_l_seg = float(np.mean([s["l_seg"] for s in steps]))
        logs.append(
            {
                "epoch": epoch,
                "l_seg": epoch_l_seg,
                "l_cls": float(np.mean([s["l_cls"] for s in steps])),
                "l_adv": float(np.mean([s["l_adv"] for s in steps])),
                "pass_rate": passed / total if total else 0.0,
                "skipped_cls_steps": skipped_cls,
                "lr": cfg.lr_synthesis * factor,
                "steps": steps,
            }
        )
        if not math.isfinite(epoch_l_seg):
            raise TrainingDiverged(f"non-finite l_seg at epoch {epoch}")
        if baseline is None:
            baseline = epoch_l_seg
        streak = streak + 1 if epoch_l_seg > 2.0 * baseline else 0
        if streak >= 5:
            raise TrainingDiverged(
                f"l_seg {epoch_l_seg:.4f} above 2x first-epoch mean {baseline:.4f} "
                f"for 5 consecutive epochs (epoch {epoch}); last losses: "
                f"{[round(l['l_seg'], 4) for l in logs[-5:]]}"
            )

    generator.eval()
    return generator, logs
