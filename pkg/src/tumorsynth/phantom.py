"""Deterministic procedural phantoms: a textured background, one ellipsoidal
organ, and optional embedded "real" tumors (darker blobs with noise).

Phantoms are emitted directly in the normalized [0, 1] intensity domain and
stand in for windowed CT volumes in tests and the desk-scale benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import InfeasibleGeometry
from .geometry import deformed_blob, ellipsoid_quadratic, smooth_noise
from .volume import LabelMap, Volume

ORGAN_EDGE_MARGIN = 2  # voxels of clearance between organ and volume border


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry and appearance ranges for one generated case."""

    shape: tuple[int, int, int] = (56, 56, 56)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    organ_radius_mm: tuple[float, float] = (14.0, 20.0)
    tumor_count: tuple[int, int] = (1, 2)
    tumor_radius_mm: tuple[float, float] = (2.5, 8.0)
    tumor_offset: tuple[float, float] = (0.18, 0.38)
    noise_amplitude: float = 0.03
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "shape", tuple(int(s) for s in self.shape))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        if min(self.shape) < 16:
            raise ValueError(f"phantom shape components must be >= 16, got {self.shape}")
        for name in ("organ_radius_mm", "tumor_count", "tumor_radius_mm", "tumor_offset"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} range is empty: ({lo}, {hi})")
        if self.noise_amplitude < 0:
            raise ValueError("noise_amplitude must be >= 0")


def generate_phantom(cfg: PhantomConfig) -> tuple[Volume, LabelMap, LabelMap]:
    """Build one phantom case: (volume, organ labels, real-tumor labels).

    Pure function of cfg: identical configs give bitwise-identical output.
    Raises InfeasibleGeometry when the sampled organ cannot fit in the shape.
    """
    rng = np.random.default_rng(cfg.seed)
    shape = cfg.shape
    spacing = np.asarray(cfg.spacing)

    # textured background
    vol = rng.uniform(0.15, 0.30) + 0.05 * smooth_noise(rng, shape, sigma=6.0)

    # axis-aligned ellipsoidal organ (exact support, so the analytic volume
    # (4/3)*pi*a*b*c predicts the voxel count)
    radii_mm = rng.uniform(*cfg.organ_radius_mm, size=3)
    radii_vox = radii_mm / spacing
    if any(2 * (r + ORGAN_EDGE_MARGIN) >= s for r, s in zip(radii_vox, shape)):
        raise InfeasibleGeometry(
            f"organ semi-axes {radii_vox} (voxels) cannot fit in shape {shape} "
            f"with margin {ORGAN_EDGE_MARGIN}"
        )
    center = np.array(
        [rng.uniform(r + ORGAN_EDGE_MARGIN, s - 1 - r - ORGAN_EDGE_MARGIN) for r, s in zip(radii_vox, shape)]
    )
    organ_mask = ellipsoid_quadratic(shape, center, radii_vox) <= 1.0
    organ_soft = ndimage.gaussian_filter(organ_mask.astype(np.float64), sigma=1.0)
    vol += organ_soft * (rng.uniform(0.30, 0.45) + 0.03 * smooth_noise(rng, shape, sigma=3.0))

    # embedded real tumors: darker blobs with multiplicative noise
    tumor_mask = np.zeros(shape, dtype=bool)
    interior = ndimage.binary_erosion(organ_mask, iterations=2)
    interior_coords = np.argwhere(interior)
    count = int(rng.integers(cfg.tumor_count[0], cfg.tumor_count[1] + 1))
    for _ in range(count):
        if len(interior_coords) == 0:
            break
        t_center = interior_coords[rng.integers(0, len(interior_coords))].astype(np.float64)
        t_radius = rng.uniform(*cfg.tumor_radius_mm)
        t_axes = np.maximum(t_radius * rng.uniform(0.75, 1.25, size=3) / spacing, 1.0)
        blob = deformed_blob(rng, shape, t_center, t_axes) & organ_mask
        if not blob.any():
            continue
        soft = ndimage.gaussian_filter(blob.astype(np.float64), sigma=1.0)
        offset = rng.uniform(*cfg.tumor_offset)
        grain = 1.0 + 0.15 * smooth_noise(rng, shape, sigma=1.5)
        vol -= soft * offset * grain
        tumor_mask |= blob

    vol += cfg.noise_amplitude * rng.standard_normal(shape)
    vol = np.clip(vol, 0.0, 1.0).astype(np.float32)

    case_id = f"phantom-{cfg.seed:010d}"
    return (
        Volume(vol, cfg.spacing, case_id),
        LabelMap(organ_mask.astype(np.uint8), cfg.spacing, case_id),
        LabelMap(tumor_mask.astype(np.uint8), cfg.spacing, case_id),
    )


def case_seeds(master_seed: int, count: int) -> list[int]:
    """Stable per-case seeds derived from one master seed."""
    ss = np.random.SeedSequence(master_seed)
    return [int(child.generate_state(1)[0]) for child in ss.spawn(count)]


def build_phantom_dataset(
    out_dir,
    n_labeled: int,
    n_unlabeled: int,
    seed: int,
    base: PhantomConfig = PhantomConfig(),
    unlabeled_tumor_free: bool = True,
):
    """Generate and persist a phantom dataset with a labeled/unlabeled split.

    Labeled cases carry their real-tumor labels; unlabeled cases omit them
    (and by default are generated tumor-free, standing in for healthy scans).
    Returns the manifest records.
    """
    from dataclasses import replace
    from pathlib import Path

    from . import storage

    out_dir = Path(out_dir)
    seeds = case_seeds(seed, n_labeled + n_unlabeled)
    records = []
    for i, case_seed in enumerate(seeds):
        labeled = i < n_labeled
        cfg = replace(base, seed=case_seed)
        if not labeled and unlabeled_tumor_free:
            cfg = replace(cfg, tumor_count=(0, 0))
        vol, organ, tumor = generate_phantom(cfg)
        rel_image = f"cases/{vol.id}.vol"
        rel_organ = f"cases/{vol.id}_organ.seg"
        storage.save_volume(vol, out_dir / rel_image)
        storage.save_labelmap(organ, out_dir / rel_organ)
        rel_tumor = None
        if labeled:
            rel_tumor = f"cases/{vol.id}_tumor.seg"
            storage.save_labelmap(tumor, out_dir / rel_tumor)
        records.append(
            storage.CaseRecord(
                id=vol.id,
                split="labeled" if labeled else "unlabeled",
                image=rel_image,
                organ=rel_organ,
                tumor=rel_tumor,
            )
        )
    storage.write_manifest(out_dir, records, {"seed": seed, "n_labeled": n_labeled, "n_unlabeled": n_unlabeled})
    return records
