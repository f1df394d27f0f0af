import numpy as np
import pytest

from tumorsynth.errors import InfeasibleGeometry
from tumorsynth.phantom import PhantomConfig, build_phantom_dataset, case_seeds, generate_phantom
from tumorsynth.storage import read_manifest


def test_same_config_is_bitwise_identical():
    cfg = PhantomConfig(seed=99)
    a = generate_phantom(cfg)
    b = generate_phantom(cfg)
    for x, y in zip(a, b):
        assert (x.data == y.data).all()


def test_tumor_voxels_contained_in_organ():
    for seed in (1, 2, 3, 4, 5):
        _, organ, tumor = generate_phantom(PhantomConfig(seed=seed, tumor_count=(1, 3)))
        outside = tumor.data.astype(bool) & ~organ.data.astype(bool)
        assert not outside.any()


def test_organ_volume_matches_analytic_ellipsoid():
    # independent oracle: replay the generator's radius draw and compare the
    # voxel count with (4/3)*pi*a*b*c within 10%
    for seed in (11, 22, 33):
        cfg = PhantomConfig(seed=seed, tumor_count=(0, 0))
        _, organ, _ = generate_phantom(cfg)
        rng = np.random.default_rng(seed)
        rng.uniform(0.15, 0.30)
        rng.standard_normal(cfg.shape)  # background texture draw
        radii = rng.uniform(*cfg.organ_radius_mm, size=3) / np.asarray(cfg.spacing)
        analytic = 4.0 / 3.0 * np.pi * np.prod(radii)
        counted = int(organ.data.sum())
        assert abs(counted - analytic) / analytic < 0.10, (counted, analytic)


def test_intensities_stay_normalized():
    vol, _, _ = generate_phantom(PhantomConfig(seed=5, noise_amplitude=0.2))
    assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0


def test_infeasible_organ_raises():
    with pytest.raises(InfeasibleGeometry):
        generate_phantom(PhantomConfig(shape=(24, 24, 24), organ_radius_mm=(16.0, 18.0), seed=0))


def test_config_validation():
    with pytest.raises(ValueError):
        PhantomConfig(shape=(8, 40, 40))
    with pytest.raises(ValueError):
        PhantomConfig(tumor_radius_mm=(5.0, 2.0))


def test_case_seeds_stable():
    assert case_seeds(42, 5) == case_seeds(42, 5)
    assert case_seeds(42, 5) != case_seeds(43, 5)


def test_build_phantom_dataset_split_and_manifest(tmp_path):
    records = build_phantom_dataset(tmp_path, n_labeled=3, n_unlabeled=4, seed=7)
    assert len(records) == 7
    loaded, meta = read_manifest(tmp_path)
    assert meta["seed"] == 7
    splits = [r.split for r in loaded]
    assert splits.count("labeled") == 3 and splits.count("unlabeled") == 4
    for r in loaded:
        assert (tmp_path / r.image).exists()
        assert (tmp_path / r.organ).exists()
        assert (r.tumor is None) == (r.split == "unlabeled")


def test_unlabeled_cases_are_tumor_free_by_default(tmp_path):
    from tumorsynth.pipeline import DatasetPool

    build_phantom_dataset(tmp_path, n_labeled=1, n_unlabeled=2, seed=3)
    pool = DatasetPool.from_directory(tmp_path)
    assert len(pool.labeled) == 1 and len(pool.unlabeled) == 2
    assert all(c.tumor is None for c in pool.unlabeled)
