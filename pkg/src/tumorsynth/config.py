"""Run configuration: defaults, JSON/TOML loading, environment and CLI
overrides, strict unknown-key rejection, and an order-independent hash.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ConfigError

ENV_PREFIX = "TUMORSYNTH_"

DEFAULTS: dict = {
    "seed": 0,
    "data": {
        "root": "",
    },
    "phantom": {
        "count": 40,
        "labeled": 20,
        "shape": [56, 56, 56],
        "spacing": [1.0, 1.0, 1.0],
        "organ_radius_mm": [14.0, 20.0],
        "tumor_count": [1, 2],
        "tumor_radius_mm": [2.5, 8.0],
        "tumor_offset": [0.18, 0.38],
        "noise_amplitude": 0.03,
        "unlabeled_tumor_free": True,
    },
    "stage1": {
        "lr_segmentation": 3e-4,
        "batch": 4,
        "epochs": 100,
        "steps_per_epoch": 25,
        "schedule": "cosine",
        "patch_size": [96, 96, 96],
        "base_channels": 8,
    },
    "stage2": {
        "lambda_cls": 0.1,
        "lr_synthesis": 1e-4,
        "batch": 4,
        "epochs": 100,
        "steps_per_epoch": 25,
        "schedule": "cosine",
        "patch_size": [96, 96, 96],
        "base_channels": 8,
        "size_spec": [5.0, 15.0],
        "min_organ_voxels": 100,
    },
    "gate": {
        "threshold_t": 0.7,
        "bin_thresh": 0.5,
    },
    "gaussian": {
        "sigma": 1.0,
        "radius": 3,
        "blur_activation": False,
    },
    "segmentation": {
        "mix_ratio": [1, 1],
        "lr": 3e-4,
        "batch": 4,
        "epochs": 100,
        "steps_per_epoch": 25,
        "schedule": "cosine",
        "patch_size": [96, 96, 96],
        "base_channels": 8,
        "size_spec": [5.0, 15.0],
        "min_organ_voxels": 100,
        "drop_failed": False,
    },
    "synthesize": {
        "count": 20,
        "preview": False,
    },
    "infer": {
        "window": [96, 96, 96],
        "overlap": 0.5,
    },
    "eval": {
        "small_threshold_mm": 20.0,
    },
    "turing": {
        "port": 8008,
        "seed": 0,
        "design": {
            "type_tags": ["liver", "pancreas", "kidney", "lung", "covid19"],
            "per_type": 18,
            "real_per_type": 9,
        },
        "demo_pool_margin": 2,
    },
}


@dataclass(frozen=True)
class RunConfig:
    """Validated, merged configuration with a content hash."""

    values: dict
    config_hash: str

    def __getitem__(self, key):
        return self.values[key]

    def section(self, name: str) -> dict:
        return self.values[name]


def config_hash(values: dict) -> str:
    canonical = json.dumps(values, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def _check_unknown_keys(values: dict, schema: dict, path: str = ""):
    for key, val in values.items():
        dotted = f"{path}{key}"
        if key not in schema:
            raise ConfigError(f"unknown config key: {dotted}")
        if isinstance(schema[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {dotted} must be a table/object")
            _check_unknown_keys(val, schema[key], dotted + ".")


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(target: dict, dotted: str, value):
    parts = dotted.split(".")
    node = target
    for part in parts[:-1]:
        node = node.setdefault(part, {})
    node[parts[-1]] = value


def _env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    out: dict = {}
    for name, raw in sorted(environ.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        dotted = name[len(ENV_PREFIX):].lower().replace("__", ".")
        _set_dotted(out, dotted, _parse_value(raw))
    return out


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    environ=None,
) -> RunConfig:
    """Merge defaults <- file <- environment <- `key.path=value` overrides."""
    merged = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        if path.suffix == ".toml":
            with open(path, "rb") as fh:
                loaded = tomllib.load(fh)
        elif path.suffix == ".json":
            with open(path) as fh:
                try:
                    loaded = json.load(fh)
                except json.JSONDecodeError as e:
                    raise ConfigError(f"invalid JSON in {path}: {e}")
        else:
            raise ConfigError(f"config must be .json or .toml, got {path.suffix!r}")
        merged = _deep_merge(merged, loaded)

    merged = _deep_merge(merged, _env_overrides(environ))

    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key.path=value")
        dotted, _, raw = item.partition("=")
        patch: dict = {}
        _set_dotted(patch, dotted.strip(), _parse_value(raw.strip()))
        merged = _deep_merge(merged, patch)

    _check_unknown_keys(merged, DEFAULTS)
    return RunConfig(values=merged, config_hash=config_hash(merged))
