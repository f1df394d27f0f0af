import logging
import os
from dataclasses import replace

import numpy as np
import pytest
import torch

from tumorsynth.masks import SizeSpec
from tumorsynth.networks import ClsNet, GenNet, SegNet, state_hash
from tumorsynth.phantom import PhantomConfig, build_phantom_dataset, case_seeds, generate_phantom
from tumorsynth.pipeline import (
    DatasetPool,
    SegTrainConfig,
    evaluate_label_pairs,
    infer,
    synth_case_stream,
    train_segmentation,
)
from tumorsynth.adversarial import AdvConfig, train_stage1
from tumorsynth.training import Case
from tumorsynth.volume import LabelMap, Volume

TINY_PHANTOM = PhantomConfig(shape=(40, 40, 40), organ_radius_mm=(11.0, 14.0),
                             tumor_radius_mm=(2.5, 5.0))


def tiny_cases(n, master_seed, tumor_count=(1, 1)):
    out = []
    for s in case_seeds(master_seed, n):
        v, o, t = generate_phantom(replace(TINY_PHANTOM, seed=s, tumor_count=tumor_count))
        out.append(Case(v.id, v, o, t))
    return out


class OnesSeg:
    """Oracle segmenter: every voxel is tumor with probability 1."""

    def predict_probs(self, data):
        return torch.ones(tuple(np.shape(data)))


class ConstGen(torch.nn.Module):
    """Raw field of constant strength (strong darkening under the mask)."""

    def forward(self, x):
        return torch.full_like(x, 2.0)


def snapshot_tree(root):
    listing = []
    for dirpath, dirnames, filenames in os.walk(root):
        for name in sorted(filenames):
            p = os.path.join(dirpath, name)
            listing.append((p, os.path.getsize(p), os.path.getmtime(p)))
    return sorted(listing)


def test_pool_rejects_duplicate_ids():
    cases = tiny_cases(2, 1)
    with pytest.raises(ValueError, match="both pools"):
        DatasetPool(tuple(cases), tuple(cases))


def test_pool_requires_organ_on_unlabeled():
    c = tiny_cases(1, 2)[0]
    with pytest.raises(ValueError, match="organ"):
        DatasetPool((), (Case(c.id, c.image, None, None),))


def test_stream_with_oracles_always_passes(tmp_path):
    unlabeled = tiny_cases(3, 3, tumor_count=(0, 0))
    emitted = list(
        synth_case_stream(unlabeled, ConstGen(), OnesSeg(), threshold_t=0.7, seed=1,
                          size_spec=SizeSpec((3.0, 6.0)), min_organ_voxels=50, count=5)
    )
    assert len(emitted) == 5
    for volume, label, verdict in emitted:
        assert verdict.passed and verdict.proportion_p == 1.0
        assert label.data.any()
        assert int(label.data.sum()) == verdict.mask_voxels


def test_stream_reproducible_under_seed():
    unlabeled = tiny_cases(3, 3, tumor_count=(0, 0))
    torch.manual_seed(0)
    seg = SegNet(base_channels=2)
    seg.eval()

    def run():
        out = []
        for volume, label, verdict in synth_case_stream(
            unlabeled, ConstGen(), seg, threshold_t=0.7, seed=9,
            size_spec=SizeSpec((3.0, 6.0)), min_organ_voxels=50, count=6,
        ):
            out.append((volume.id, verdict.proportion_p, verdict.passed, int(label.data.sum())))
        return out

    assert run() == run()


def test_stream_failed_cases_return_original_with_empty_label():
    unlabeled = tiny_cases(2, 4, tumor_count=(0, 0))

    class ZeroSeg:
        def predict_probs(self, data):
            return torch.zeros(tuple(np.shape(data)))

    by_id = {c.id: c for c in unlabeled}
    for volume, label, verdict in synth_case_stream(
        unlabeled, ConstGen(), ZeroSeg(), threshold_t=0.7, seed=2,
        size_spec=SizeSpec((3.0, 6.0)), min_organ_voxels=50, count=3,
    ):
        assert not verdict.passed
        assert not label.data.any()
        assert (volume.data == by_id[volume.id].image.data).all()


def test_stream_skips_empty_organ(caplog):
    good = tiny_cases(1, 5, tumor_count=(0, 0))[0]
    empty = Case(
        "empty-organ",
        good.image,
        LabelMap(np.zeros(good.image.shape, np.uint8), good.image.spacing, "empty-organ"),
        None,
    )
    with caplog.at_level(logging.WARNING):
        emitted = list(
            synth_case_stream([empty, good], ConstGen(), OnesSeg(), seed=1,
                              size_spec=SizeSpec((3.0, 6.0)), min_organ_voxels=50, count=4)
        )
    assert len(emitted) == 4
    assert {v.id for v, _, _ in emitted} == {good.id}
    assert "empty organ" in caplog.text


def test_stream_pass_rate_matches_verdict_log():
    unlabeled = tiny_cases(3, 6, tumor_count=(0, 0))
    torch.manual_seed(3)
    seg = SegNet(base_channels=2)
    seg.eval()
    verdicts = [
        v for _, _, v in synth_case_stream(
            unlabeled, ConstGen(), seg, threshold_t=0.5, seed=4,
            size_spec=SizeSpec((3.0, 6.0)), min_organ_voxels=50, count=10,
        )
    ]
    pass_rate = sum(v.passed for v in verdicts) / len(verdicts)
    assert pass_rate == np.mean([v.passed for v in verdicts])


def test_stream_writes_nothing_to_disk(tmp_path):
    build_phantom_dataset(tmp_path, n_labeled=1, n_unlabeled=2, seed=8, base=TINY_PHANTOM)
    pool = DatasetPool.from_directory(tmp_path)
    before = snapshot_tree(tmp_path)
    list(
        synth_case_stream(pool, ConstGen(), OnesSeg(), seed=1,
                          size_spec=SizeSpec((3.0, 6.0)), min_organ_voxels=50, count=4)
    )
    assert snapshot_tree(tmp_path) == before


TINY_FIT = dict(lr=1e-3, batch=2, epochs=2, steps_per_epoch=3,
                patch_size=(16, 16, 16), base_channels=2)


def test_mix_ratio_one_zero_reproduces_baseline_bitwise():
    labeled = tiny_cases(3, 7)
    unlabeled = tiny_cases(2, 8, tumor_count=(0, 0))
    pool = DatasetPool(tuple(labeled), tuple(unlabeled))
    adv = AdvConfig(seed=5, lr_segmentation=TINY_FIT["lr"], batch=TINY_FIT["batch"],
                    epochs=TINY_FIT["epochs"], steps_per_epoch=TINY_FIT["steps_per_epoch"],
                    patch_size=TINY_FIT["patch_size"], base_channels=TINY_FIT["base_channels"])
    base_model, base_logs = train_stage1(labeled, adv)

    scfg = SegTrainConfig(mix_ratio=(1, 0), seed=5, **TINY_FIT)
    torch.manual_seed(123)  # trainer must re-seed; pollute global state first
    seg_model, seg_logs = train_segmentation(pool, None, None, scfg)
    assert state_hash(base_model) == state_hash(seg_model)
    assert [l["loss"] for l in base_logs] == [l["loss"] for l in seg_logs]


def test_empty_unlabeled_pool_degenerates_to_baseline():
    labeled = tiny_cases(3, 7)
    pool = DatasetPool(tuple(labeled), ())
    scfg = SegTrainConfig(mix_ratio=(1, 1), seed=5, **TINY_FIT)
    model, _ = train_segmentation(pool, None, None, scfg)
    adv = AdvConfig(seed=5, lr_segmentation=TINY_FIT["lr"], batch=TINY_FIT["batch"],
                    epochs=TINY_FIT["epochs"], steps_per_epoch=TINY_FIT["steps_per_epoch"],
                    patch_size=TINY_FIT["patch_size"], base_channels=TINY_FIT["base_channels"])
    base_model, _ = train_stage1(labeled, adv)
    assert state_hash(model) == state_hash(base_model)


def test_train_segmentation_with_synthesis_runs_and_consumes_failures():
    labeled = tiny_cases(2, 9)
    unlabeled = tiny_cases(3, 10, tumor_count=(0, 0))
    pool = DatasetPool(tuple(labeled), tuple(unlabeled))
    torch.manual_seed(0)
    seg = SegNet(base_channels=2)
    seg.eval()
    scfg = SegTrainConfig(mix_ratio=(1, 1), seed=6, size_spec=SizeSpec((3.0, 6.0)),
                          min_organ_voxels=50, **TINY_FIT)
    model, logs = train_segmentation(pool, ConstGen(), seg, scfg)
    assert len(logs) == TINY_FIT["epochs"]
    assert all(np.isfinite(l["loss"]) for l in logs)


def test_train_segmentation_requires_models_for_synthesis():
    labeled = tiny_cases(2, 9)
    unlabeled = tiny_cases(2, 10, tumor_count=(0, 0))
    pool = DatasetPool(tuple(labeled), tuple(unlabeled))
    with pytest.raises(ValueError, match="generator"):
        train_segmentation(pool, None, None, SegTrainConfig(mix_ratio=(1, 1), seed=1, **TINY_FIT))


def test_infer_identity_window_matches_direct_forward():
    case = tiny_cases(1, 11)[0]
    torch.manual_seed(4)
    model = SegNet(base_channels=2)
    model.eval()
    labels, probs = infer(model, case.image, window=case.image.shape, overlap=0.5)
    direct = model.predict_probs(case.image.data).numpy()
    assert np.allclose(probs.data, direct, atol=1e-6)
    assert probs.data.min() >= 0.0 and probs.data.max() <= 1.0
    assert set(np.unique(labels.data)) <= {0, 1}


def test_infer_overlapping_windows_average_in_unit_interval():
    case = tiny_cases(1, 12)[0]
    torch.manual_seed(4)
    model = SegNet(base_channels=2)
    model.eval()
    _, probs = infer(model, case.image, window=(24, 24, 24), overlap=0.5)
    assert probs.shape == case.image.shape
    assert probs.data.min() >= 0.0 and probs.data.max() <= 1.0


def test_infer_near_zero_probabilities_give_empty_prediction():
    case = tiny_cases(1, 13)[0]
    torch.manual_seed(4)
    model = SegNet(base_channels=2)
    torch.nn.init.constant_(model.head.weight, 0.0)
    torch.nn.init.constant_(model.head.bias, -20.0)
    model.eval()
    labels, _ = infer(model, case.image, window=(24, 24, 24))
    assert not labels.data.any()


def test_infer_validates_window_and_overlap():
    case = tiny_cases(1, 14)[0]
    model = SegNet(base_channels=2)
    with pytest.raises(ValueError, match="multiples of 4"):
        infer(model, case.image, window=(10, 10, 10))
    with pytest.raises(ValueError, match="overlap"):
        infer(model, case.image, window=(16, 16, 16), overlap=1.0)


def test_infer_pads_small_volume():
    vol = Volume(np.full((10, 10, 10), 0.5, np.float32), (1, 1, 1), "small")
    torch.manual_seed(4)
    model = SegNet(base_channels=2)
    model.eval()
    labels, probs = infer(model, vol, window=(16, 16, 16))
    assert labels.shape == vol.shape


def test_evaluate_label_pairs_report_shape():
    gt = np.zeros((8, 8, 8), np.uint8)
    gt[2:4, 2:4, 2:4] = 1
    spacing = (1.0, 1.0, 1.0)
    pairs = [
        ("a", LabelMap(gt.copy(), spacing, "a"), LabelMap(gt.copy(), spacing, "a")),
        ("b", LabelMap(np.zeros_like(gt), spacing, "b"), LabelMap(gt.copy(), spacing, "b")),
    ]
    rep = evaluate_label_pairs(pairs, small_threshold_mm=20.0)
    assert rep["mean_dice"] == pytest.approx(50.0)
    assert rep["volume_detection"]["counts"] == {"tp": 1, "tn": 0, "fp": 0, "fn": 1}
    assert rep["instance_detection"]["total"] == 2
    assert rep["instance_detection"]["detected"] == 1
    assert rep["instance_detection"]["small"]["total"] == 2


def test_stream_drop_failed_skips_failed_cases():
    unlabeled = tiny_cases(2, 15, tumor_count=(0, 0))

    class ZeroSeg:
        def predict_probs(self, data):
            return torch.zeros(tuple(np.shape(data)))

    dropped = list(
        synth_case_stream(unlabeled, ConstGen(), ZeroSeg(), threshold_t=0.7, seed=2,
                          size_spec=SizeSpec((3.0, 6.0)), min_organ_voxels=50, count=3,
                          drop_failed=True)
    )
    assert dropped == []  # generator exhausts its draw budget without emitting
