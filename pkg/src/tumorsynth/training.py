"""Shared segmentation-training machinery.

Both the stage-1 discriminator trainer and the downstream augmented trainer
run `fit_seg`; with no synthetic source the two consume identical randomness,
so a mix ratio of (1, 0) reproduces baseline training bit-for-bit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import TrainingDiverged
from .networks import SegNet
from .volume import LabelMap, Volume, crop_patch, merge_labels

log = logging.getLogger(__name__)

# labeled-crop policy mix: emphasize tumors, keep background context
CROP_POLICY_WEIGHTS = (("tumor-centered", 0.5), ("organ-centered", 0.3), ("random", 0.2))


@dataclass(frozen=True)
class Case:
    """A runtime case: image plus organ labels and optional tumor labels."""

    id: str
    image: Volume
    organ: LabelMap | None = None
    tumor: LabelMap | None = None

    def combined_labels(self) -> LabelMap:
        organ = self.organ
        if organ is None:
            zeros = np.zeros(self.image.shape, dtype=np.uint8)
            organ = LabelMap(zeros, self.image.spacing, self.id)
        return merge_labels(organ, self.tumor)


def dice_ce_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Dice + binary cross-entropy, averaged over the batch."""
    bce = torch.nn.functional.binary_cross_entropy_with_logits(logits, target)
    probs = torch.sigmoid(logits)
    dims = tuple(range(1, logits.ndim))
    inter = (probs * target).sum(dims)
    denom = probs.sum(dims) + target.sum(dims)
    dice = 1.0 - (2.0 * inter + 1.0) / (denom + 1.0)
    return bce + dice.mean()


def pick_crop_policy(rng: np.random.Generator, case: Case) -> str:
    names = [n for n, _ in CROP_POLICY_WEIGHTS]
    weights = np.array([w for _, w in CROP_POLICY_WEIGHTS])
    policy = str(rng.choice(names, p=weights / weights.sum()))
    if policy == "tumor-centered" and (case.tumor is None or not case.tumor.data.any()):
        policy = "organ-centered"
    if policy == "organ-centered" and (case.organ is None or not case.organ.data.any()):
        policy = "random"
    return policy


def labeled_patch(case: Case, patch_size, rng: np.random.Generator):
    """One (image, tumor-target) crop pair as float32 arrays."""
    policy = pick_crop_policy(rng, case)
    vol, labels = crop_patch(
        case.image, case.combined_labels(), patch_size, policy, seed=int(rng.integers(2**63))
    )
    target = (labels.data == 2).astype(np.float32)
    return vol.data, target


def cosine_factor(epoch: int, total_epochs: int) -> float:
    return 0.5 * (1.0 + math.cos(math.pi * epoch / max(total_epochs, 1)))


def fit_seg(
    labeled_cases: list[Case],
    *,
    lr: float,
    batch: int,
    epochs: int,
    steps_per_epoch: int,
    patch_size,
    base_channels: int,
    seed: int,
    schedule: str = "cosine",
    synth_fetch=None,
    n_synth_per_batch: int = 0,
    model: SegNet | None = None,
) -> tuple[SegNet, list[dict]]:
    """Train a SegNet on labeled crops, optionally mixing synthetic patches.

    `synth_fetch(n, rng)` must return n (image, tumor-target) patch pairs.
    Deterministic for a given seed (model init, sampling and optimization all
    derive from it). The divergence guard aborts if the epoch-mean loss stays
    above twice the first epoch's mean for 5 consecutive epochs.
    """
    if n_synth_per_batch > 0 and synth_fetch is None:
        raise ValueError("synthetic slots requested without a synthetic source")
    n_labeled = batch - n_synth_per_batch
    if n_labeled < 0:
        raise ValueError(f"n_synth_per_batch {n_synth_per_batch} exceeds batch {batch}")

    torch.manual_seed(seed)
    if model is None:
        model = SegNet(base_channels=base_channels)
    model.train()
    rng = np.random.default_rng(seed)
    opt = torch.optim.AdamW(model.parameters(), lr=lr)

    logs: list[dict] = []
    baseline_loss = None
    over_budget_streak = 0
    for epoch in range(epochs):
        factor = cosine_factor(epoch, epochs) if schedule == "cosine" else 1.0
        for group in opt.param_groups:
            group["lr"] = lr * factor
        step_losses = []
        for _ in range(steps_per_epoch):
            images, targets = [], []
            for _ in range(n_labeled):
                case = labeled_cases[int(rng.integers(len(labeled_cases)))]
                img, tgt = labeled_patch(case, patch_size, rng)
                images.append(img)
                targets.append(tgt)
            if n_synth_per_batch > 0:
                for img, tgt in synth_fetch(n_synth_per_batch, rng):
                    images.append(img)
                    targets.append(tgt)
            x = torch.from_numpy(np.stack(images)).unsqueeze(1)
            y = torch.from_numpy(np.stack(targets)).unsqueeze(1)
            loss = dice_ce_loss(model(x), y)
            opt.zero_grad()
            loss.backward()
            opt.step()
            step_losses.append(float(loss.detach()))

        mean_loss = float(np.mean(step_losses))
        logs.append({"epoch": epoch, "loss": mean_loss, "lr": lr * factor, "step_losses": step_losses})
        if not math.isfinite(mean_loss):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
        if baseline_loss is None:
            baseline_loss = mean_loss
        over_budget_streak = over_budget_streak + 1 if mean_loss > 2.0 * baseline_loss else 0
        if over_budget_streak >= 5:
            raise TrainingDiverged(
                f"loss {mean_loss:.4f} above 2x first-epoch mean {baseline_loss:.4f} "
                f"for 5 consecutive epochs (epoch {epoch})"
            )

    model.eval()
    return model, logs
