"""Phantom-backed reader-study pools for demos and end-to-end tests.

Real entries come from phantom cases generated with an embedded tumor;
synthetic entries place a sampled mask on a tumor-free phantom and run the
synthesis transform with a fixed-strength field (no trained generator needed
to exercise the blinded study flow).
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..masks import SizeSpec, sample_tumor_mask
from ..phantom import PhantomConfig, case_seeds, generate_phantom
from ..synthesis import GaussianFilterCfg, GeneratorOutput, apply_synthesis
from ..volume import LabelMap
from .cases import DEFAULT_TYPE_TAGS, PoolEntry, TRUTH_REAL, TRUTH_SYNTHETIC, TuringDesign

DEMO_FIELD_STRENGTH = 0.9  # raw-field value; tanh(0.9) ~ 0.72 of the local texture


def make_phantom_pools(
    design: TuringDesign = TuringDesign(),
    seed: int = 0,
    margin: int = 2,
    base: PhantomConfig = PhantomConfig(tumor_count=(1, 1)),
    size_spec: SizeSpec = SizeSpec((6.0, 16.0)),
) -> tuple[list[PoolEntry], list[PoolEntry]]:
    """Build (real, synthetic) pools sized design + margin per type."""
    real_pool, synthetic_pool = [], []
    n_real = design.real_per_type + margin
    n_synth = design.synthetic_per_type + margin
    per_type = n_real + n_synth
    seeds = case_seeds(seed, per_type * len(design.type_tags))
    rng = np.random.default_rng(seed)
    i = 0
    for tag in design.type_tags:
        for _ in range(n_real):
            cfg = replace(base, seed=seeds[i], tumor_count=(1, 1))
            vol, organ, tumor = generate_phantom(cfg)
            real_pool.append(
                PoolEntry(f"{tag}-real-{seeds[i]:08x}", tag, TRUTH_REAL, vol, tumor)
            )
            i += 1
        for _ in range(n_synth):
            cfg = replace(base, seed=seeds[i], tumor_count=(0, 0))
            vol, organ, _ = generate_phantom(cfg)
            mask = sample_tumor_mask(organ, size_spec, seed=int(rng.integers(2**63)))
            field = np.full(vol.shape, DEMO_FIELD_STRENGTH, dtype=np.float32)
            x_hat = apply_synthesis(vol, mask, GeneratorOutput(field), GaussianFilterCfg())
            label = LabelMap(mask.data.astype(np.uint8), vol.spacing, vol.id)
            synthetic_pool.append(
                PoolEntry(f"{tag}-synth-{seeds[i]:08x}", tag, TRUTH_SYNTHETIC, x_hat, label)
            )
            i += 1
    return real_pool, synthetic_pool
