"""Adversarial tumor synthesis, quality gating, and augmented segmentation."""

__version__ = "0.1.0"

from .adversarial import AdvConfig, LossBundle, compute_adv_losses, compute_seg_loss, train_stage1, train_stage2
from .gating import QualityVerdict, gate, proportion
from .masks import SizeSpec, TumorMask, measure_diameter, sample_tumor_mask
from .metrics import ConfusionCounts, MetricsReport, confusion_metrics, detect_instances, dice, kfold_split, stratify_small
from .phantom import PhantomConfig, build_phantom_dataset, generate_phantom
from .pipeline import DatasetPool, SegTrainConfig, infer, synth_case_stream, train_segmentation
from .storage import load_labelmap, load_volume, save_labelmap, save_volume
from .synthesis import GaussianFilterCfg, GeneratorOutput, apply_synthesis, gaussian_blur
from .volume import HuWindow, LabelMap, Volume, clip_and_normalize, crop_patch

__all__ = [name for name in dir() if not name.startswith("_")]
