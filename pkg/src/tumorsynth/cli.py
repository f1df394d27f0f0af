"""Unified command-line entry point.

Every artifact-producing command writes a run manifest (command, config hash,
seeds, version, inputs, outputs) sufficient to reproduce the run. Exit codes:
0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import csv
import datetime
import functools
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .adversarial import AdvConfig, train_stage1, train_stage2
from .config import ConfigError, RunConfig, load_config
from .errors import TumorSynthError
from .gating import DEFAULT_THRESHOLD
from .masks import SizeSpec
from .networks import ClsNet, GenNet, SegNet, load_checkpoint, save_checkpoint
from .phantom import PhantomConfig, build_phantom_dataset
from .pipeline import (
    DatasetPool,
    SegTrainConfig,
    evaluate_label_dirs,
    infer as run_infer,
    synth_case_stream,
    train_segmentation,
)
from .storage import load_volume, save_labelmap, save_volume
from .synthesis import GaussianFilterCfg


def _load_cfg(config_path, overrides) -> RunConfig:
    try:
        return load_config(config_path, list(overrides or []))
    except ConfigError as e:
        raise click.UsageError(str(e))


def runtime_errors(fn):
    """Map package/runtime failures to exit code 1 (usage errors stay 2)."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (TumorSynthError, OSError, ValueError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(1)

    return wrapper


def write_run_manifest(target_dir: Path, command: str, cfg: RunConfig, inputs: dict, outputs: list[str]):
    target_dir = Path(target_dir)
    target_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "config_hash": cfg.config_hash,
        "seed": cfg.values["seed"],
        "config": cfg.values,
        "inputs": inputs,
        "outputs": sorted(outputs),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }
    with open(target_dir / "run_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def _gaussian_cfg(cfg: RunConfig) -> GaussianFilterCfg:
    g = cfg.section("gaussian")
    return GaussianFilterCfg(g["sigma"], g["radius"], g["blur_activation"])


def _phantom_template(cfg: RunConfig) -> PhantomConfig:
    p = cfg.section("phantom")
    return PhantomConfig(
        shape=tuple(p["shape"]),
        spacing=tuple(p["spacing"]),
        organ_radius_mm=tuple(p["organ_radius_mm"]),
        tumor_count=tuple(p["tumor_count"]),
        tumor_radius_mm=tuple(p["tumor_radius_mm"]),
        tumor_offset=tuple(p["tumor_offset"]),
        noise_amplitude=p["noise_amplitude"],
    )


def _stage1_cfg(cfg: RunConfig) -> AdvConfig:
    s = cfg.section("stage1")
    return AdvConfig(
        lr_segmentation=s["lr_segmentation"],
        batch=s["batch"],
        epochs=s["epochs"],
        steps_per_epoch=s["steps_per_epoch"],
        schedule=s["schedule"],
        patch_size=tuple(s["patch_size"]),
        base_channels=s["base_channels"],
        seed=cfg.values["seed"],
        gaussian=_gaussian_cfg(cfg),
    )


def _stage2_cfg(cfg: RunConfig) -> AdvConfig:
    s = cfg.section("stage2")
    return AdvConfig(
        lambda_cls=s["lambda_cls"],
        lr_synthesis=s["lr_synthesis"],
        batch=s["batch"],
        epochs=s["epochs"],
        steps_per_epoch=s["steps_per_epoch"],
        schedule=s["schedule"],
        patch_size=tuple(s["patch_size"]),
        base_channels=s["base_channels"],
        size_spec=SizeSpec(tuple(s["size_spec"])),
        threshold_t=cfg.section("gate")["threshold_t"],
        min_organ_voxels=s["min_organ_voxels"],
        seed=cfg.values["seed"],
        gaussian=_gaussian_cfg(cfg),
    )


def _seg_cfg(cfg: RunConfig) -> SegTrainConfig:
    s = cfg.section("segmentation")
    return SegTrainConfig(
        mix_ratio=tuple(s["mix_ratio"]),
        lr=s["lr"],
        batch=s["batch"],
        epochs=s["epochs"],
        steps_per_epoch=s["steps_per_epoch"],
        schedule=s["schedule"],
        patch_size=tuple(s["patch_size"]),
        base_channels=s["base_channels"],
        size_spec=SizeSpec(tuple(s["size_spec"])),
        threshold_t=cfg.section("gate")["threshold_t"],
        bin_thresh=cfg.section("gate")["bin_thresh"],
        min_organ_voxels=s["min_organ_voxels"],
        drop_failed=s["drop_failed"],
        seed=cfg.values["seed"],
        gaussian=_gaussian_cfg(cfg),
    )


def _write_log(path: Path, logs: list[dict]):
    with open(path, "w") as fh:
        for entry in logs:
            slim = {k: v for k, v in entry.items() if k not in ("steps", "step_losses")}
            fh.write(json.dumps(slim, sort_keys=True) + "\n")


config_option = click.option("--config", "config_path", type=click.Path(), default=None,
                             help="JSON or TOML config file.")
set_option = click.option("--set", "overrides", multiple=True, metavar="KEY.PATH=VALUE",
                          help="Override a config value (repeatable).")


@click.group()
@click.version_option(__version__)
def main():
    """Adversarial tumor synthesis, quality gating, and augmented segmentation."""


@main.command("phantom-gen")
@click.option("--count", type=int, default=None, help="Total number of cases.")
@click.option("--seed", type=int, default=None)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--labeled", "n_labeled", type=int, default=None, help="Cases with tumor labels.")
@config_option
@set_option
@runtime_errors
def phantom_gen(count, seed, out_dir, n_labeled, config_path, overrides):
    """Generate a phantom dataset with a labeled/unlabeled split."""
    cfg = _load_cfg(config_path, overrides)
    p = cfg.section("phantom")
    count = count if count is not None else p["count"]
    n_labeled = n_labeled if n_labeled is not None else min(p["labeled"], count)
    seed = seed if seed is not None else cfg.values["seed"]
    if n_labeled > count:
        raise click.UsageError(f"--labeled {n_labeled} exceeds --count {count}")
    records = build_phantom_dataset(
        out_dir, n_labeled, count - n_labeled, seed,
        base=_phantom_template(cfg), unlabeled_tumor_free=p["unlabeled_tumor_free"],
    )
    write_run_manifest(Path(out_dir), "phantom-gen", cfg, {"seed": seed},
                       ["manifest.json"] + [r.image for r in records])
    click.echo(f"wrote {len(records)} cases ({n_labeled} labeled) to {out_dir}")


@main.command("train-stage1")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@config_option
@set_option
@runtime_errors
def cmd_train_stage1(data_dir, out_dir, config_path, overrides):
    """Train the baseline tumor segmenter on labeled cases."""
    cfg = _load_cfg(config_path, overrides)
    pool = DatasetPool.from_directory(data_dir)
    model, logs = train_stage1(list(pool.labeled), _stage1_cfg(cfg))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "seg_stage1.pt", {"config_hash": cfg.config_hash, "command": "train-stage1"})
    _write_log(out / "training_log.jsonl", logs)
    write_run_manifest(out, "train-stage1", cfg, {"data": str(data_dir)},
                       ["seg_stage1.pt", "training_log.jsonl"])
    click.echo(f"stage-1 final loss {logs[-1]['loss']:.4f} -> {out / 'seg_stage1.pt'}")


@main.command("train-stage2")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--seg", "seg_path", type=click.Path(exists=True), required=True,
              help="Stage-1 segmenter checkpoint (frozen discriminator).")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@config_option
@set_option
@runtime_errors
def cmd_train_stage2(data_dir, seg_path, out_dir, config_path, overrides):
    """Adversarially train the tumor synthesis generator."""
    import torch

    cfg = _load_cfg(config_path, overrides)
    acfg = _stage2_cfg(cfg)
    pool = DatasetPool.from_directory(data_dir)
    seg_model, _ = load_checkpoint(seg_path)
    torch.manual_seed(acfg.seed)
    generator = GenNet(base_channels=acfg.base_channels)
    classifier = ClsNet(base_channels=acfg.base_channels)
    generator, logs = train_stage2(generator, seg_model, classifier,
                                   list(pool.labeled), list(pool.unlabeled), acfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(generator, out / "generator.pt", {"config_hash": cfg.config_hash, "command": "train-stage2"})
    save_checkpoint(classifier, out / "classifier.pt", {"config_hash": cfg.config_hash, "command": "train-stage2"})
    _write_log(out / "training_log.jsonl", logs)
    write_run_manifest(out, "train-stage2", cfg, {"data": str(data_dir), "seg": str(seg_path)},
                       ["generator.pt", "classifier.pt", "training_log.jsonl"])
    click.echo(f"stage-2 final l_seg {logs[-1]['l_seg']:.4f}, pass rate {logs[-1]['pass_rate']:.2f}")


@main.command("synthesize")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--generator", "gen_path", type=click.Path(exists=True), required=True)
@click.option("--seg", "seg_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--count", type=int, default=None)
@click.option("--preview", is_flag=True, default=False, help="Write center-slice PNGs of emissions.")
@config_option
@set_option
@runtime_errors
def cmd_synthesize(data_dir, gen_path, seg_path, out_dir, count, preview, config_path, overrides):
    """Dry-run the online synthesis stream and log gate verdicts."""
    cfg = _load_cfg(config_path, overrides)
    s = cfg.section("synthesize")
    count = count if count is not None else s["count"]
    preview = preview or s["preview"]
    pool = DatasetPool.from_directory(data_dir)
    generator, _ = load_checkpoint(gen_path)
    seg_model, _ = load_checkpoint(seg_path)
    gate_cfg = cfg.section("gate")
    seg_sec = cfg.section("segmentation")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    verdicts = []
    with open(out / "verdicts.jsonl", "w") as fh:
        for volume, label, verdict in synth_case_stream(
            pool, generator, seg_model,
            threshold_t=gate_cfg["threshold_t"], seed=cfg.values["seed"],
            size_spec=SizeSpec(tuple(seg_sec["size_spec"])), gaussian=_gaussian_cfg(cfg),
            bin_thresh=gate_cfg["bin_thresh"], min_organ_voxels=seg_sec["min_organ_voxels"],
            count=count,
        ):
            fh.write(verdict.to_json() + "\n")
            verdicts.append(verdict)
            if preview:
                from PIL import Image

                mid = volume.shape[0] // 2
                img = (np.clip(volume.data[mid], 0, 1) * 255).round().astype(np.uint8)
                (out / "previews").mkdir(exist_ok=True)
                Image.fromarray(img, mode="L").save(out / "previews" / f"{volume.id}-{len(verdicts):04d}.png")
    summary = {
        "count": len(verdicts),
        "pass_rate": float(np.mean([v.passed for v in verdicts])) if verdicts else None,
        "mean_proportion": float(np.mean([v.proportion_p for v in verdicts])) if verdicts else None,
        "threshold_t": gate_cfg["threshold_t"],
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
    write_run_manifest(out, "synthesize", cfg,
                       {"data": str(data_dir), "generator": str(gen_path), "seg": str(seg_path)},
                       ["verdicts.jsonl", "summary.json"])
    click.echo(f"emitted {summary['count']} cases, pass rate {summary['pass_rate']}")


@main.command("train-seg")
@click.option("--data", "data_dir", type=click.Path(exists=True), required=True)
@click.option("--generator", "gen_path", type=click.Path(), default=None,
              help="Trained generator (omit for labeled-only baseline).")
@click.option("--seg", "seg_path", type=click.Path(), default=None,
              help="Stage-1 segmenter used as the quality gate.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@config_option
@set_option
@runtime_errors
def cmd_train_seg(data_dir, gen_path, seg_path, out_dir, config_path, overrides):
    """Train the downstream segmenter with online synthetic augmentation."""
    cfg = _load_cfg(config_path, overrides)
    scfg = _seg_cfg(cfg)
    pool = DatasetPool.from_directory(data_dir)
    generator = seg_model = None
    if scfg.synth_per_batch > 0 and pool.unlabeled:
        if gen_path is None or seg_path is None:
            raise click.UsageError("--generator and --seg are required for synthetic augmentation")
        generator, _ = load_checkpoint(gen_path)
        seg_model, _ = load_checkpoint(seg_path)
    model, logs = train_segmentation(pool, generator, seg_model, scfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "seg_final.pt", {"config_hash": cfg.config_hash, "command": "train-seg"})
    _write_log(out / "training_log.jsonl", logs)
    write_run_manifest(out, "train-seg", cfg,
                       {"data": str(data_dir), "generator": gen_path, "seg": seg_path},
                       ["seg_final.pt", "training_log.jsonl"])
    click.echo(f"final loss {logs[-1]['loss']:.4f} -> {out / 'seg_final.pt'}")


@main.command("infer")
@click.option("--in", "in_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--model", "model_path", type=click.Path(exists=True), required=True)
@click.option("--probs", "probs_path", type=click.Path(), default=None)
@config_option
@set_option
@runtime_errors
def cmd_infer(in_path, out_path, model_path, probs_path, config_path, overrides):
    """Sliding-window inference: volume in, tumor label map out."""
    cfg = _load_cfg(config_path, overrides)
    icfg = cfg.section("infer")
    model, _ = load_checkpoint(model_path)
    if not isinstance(model, SegNet):
        raise click.UsageError(f"--model must be a segmenter checkpoint, got {type(model).__name__}")
    volume = load_volume(in_path)
    labels, probs = run_infer(model, volume, tuple(icfg["window"]), icfg["overlap"],
                              cfg.section("gate")["bin_thresh"])
    save_labelmap(labels, out_path)
    outputs = [str(out_path)]
    if probs_path:
        save_volume(probs, probs_path)
        outputs.append(str(probs_path))
    write_run_manifest(Path(out_path).parent, "infer", cfg,
                       {"in": str(in_path), "model": str(model_path)}, outputs)
    click.echo(f"predicted {int(labels.data.sum())} tumor voxels -> {out_path}")


@main.command("eval")
@click.option("--pred", "pred_dir", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_dir", type=click.Path(exists=True), required=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None, help="Optional per-case CSV.")
@config_option
@set_option
@runtime_errors
def cmd_eval(pred_dir, gt_dir, report_path, csv_path, config_path, overrides):
    """Compare predicted label maps against ground truth."""
    cfg = _load_cfg(config_path, overrides)
    report = evaluate_label_dirs(pred_dir, gt_dir, cfg.section("eval")["small_threshold_mm"])
    report_path = Path(report_path)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    outputs = [str(report_path)]
    if csv_path:
        with open(csv_path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["id", "dice", "instances", "detected"])
            writer.writeheader()
            writer.writerows(report["cases"])
        outputs.append(str(csv_path))
    write_run_manifest(report_path.parent, "eval", cfg,
                       {"pred": str(pred_dir), "gt": str(gt_dir)}, outputs)
    click.echo(f"mean Dice {report['mean_dice']:.2f} over {len(report['cases'])} cases")


@main.command("turing-serve")
@click.option("--cases", "cases_dir", type=click.Path(), required=True)
@click.option("--port", type=int, default=None)
@click.option("--store", "store_dir", type=click.Path(), default=None)
@click.option("--frontend", "frontend_dir", type=click.Path(), default=None)
@click.option("--prepare-demo", is_flag=True, default=False,
              help="Build a phantom-backed case set first if none exists.")
@config_option
@set_option
@runtime_errors
def cmd_turing_serve(cases_dir, port, store_dir, frontend_dir, prepare_demo, config_path, overrides):
    """Serve the blinded reader study (HTTP JSON API + optional UI bundle)."""
    import uvicorn

    from .turing.api import create_app
    from .turing.cases import TuringDesign, prepare_reader_study

    cfg = _load_cfg(config_path, overrides)
    t = cfg.section("turing")
    cases_dir = Path(cases_dir)
    if prepare_demo and not (cases_dir / "cases.json").exists():
        from .turing.demo import make_phantom_pools

        design = TuringDesign(
            type_tags=tuple(t["design"]["type_tags"]),
            per_type=t["design"]["per_type"],
            real_per_type=t["design"]["real_per_type"],
        )
        click.echo(f"preparing demo case set ({design.total} cases)...")
        real_pool, synth_pool = make_phantom_pools(design, seed=t["seed"], margin=t["demo_pool_margin"])
        prepare_reader_study(cases_dir, real_pool, synth_pool, design, seed=t["seed"])
        write_run_manifest(cases_dir, "turing-serve", cfg, {"demo": True}, ["cases.json"])
    app = create_app(cases_dir, store_dir, base_seed=t["seed"], frontend_dir=frontend_dir)
    uvicorn.run(app, host="127.0.0.1", port=port if port is not None else t["port"], log_level="warning")


@main.command("turing-report")
@click.option("--cases", "cases_dir", type=click.Path(exists=True), required=True)
@click.option("--store", "store_dir", type=click.Path(), default=None,
              help="Session store (defaults to CASES/sessions).")
@click.option("--grouping", type=click.Choice(["total", "reader", "level", "type"]), default="total")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@config_option
@set_option
@runtime_errors
def cmd_turing_report(cases_dir, store_dir, grouping, out_path, fmt, config_path, overrides):
    """Aggregate closed reader sessions into a metrics table."""
    from .turing.cases import load_reader_study
    from .turing.sessions import SessionStore, report

    cfg = _load_cfg(config_path, overrides)
    cases = load_reader_study(cases_dir)
    store = SessionStore(store_dir if store_dir is not None else Path(cases_dir) / "sessions")
    sessions = [s for s in store.load_sessions() if s.closed]
    result = report(sessions, cases, grouping)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        with open(out_path, "w") as fh:
            json.dump(result, fh, indent=1, sort_keys=True)
    else:
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["grouping", "group", "tp", "tn", "fp", "fn",
                             "sensitivity", "specificity", "accuracy", "unanswered"])
            for key, row in result["rows"].items():
                c = row["counts"]
                writer.writerow([grouping, key, c["tp"], c["tn"], c["fp"], c["fn"],
                                 row["sensitivity"], row["specificity"], row["accuracy"],
                                 row["unanswered"]])
    write_run_manifest(out_path.parent, "turing-report", cfg,
                       {"cases": str(cases_dir), "sessions": len(sessions)}, [str(out_path)])
    click.echo(f"wrote {grouping} report for {len(sessions)} closed sessions -> {out_path}")


if __name__ == "__main__":
    main()
