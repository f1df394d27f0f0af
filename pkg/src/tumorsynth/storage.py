"""Native on-disk format: raw little-endian payload + JSON sidecar.

A volume at ``case.vol`` is a flat C-order array of ``<f4`` scalars with its
shape, spacing, dtype and id in ``case.vol.json``; label maps use ``|u1`` and
additionally record their class set. The format is deliberately bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CorruptVolumeFile, ShapeMismatch
from .volume import LabelMap, Volume

VOLUME_DTYPE = np.dtype("<f4")
LABEL_DTYPE = np.dtype("|u1")
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "tumorsynth-dataset/1"


def _write_payload(path: Path, arr: np.ndarray, dtype: np.dtype, sidecar: dict):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr.astype(dtype).tofile(path)
    with open(str(path) + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)


def _read_sidecar(path: Path) -> dict:
    sidecar_path = str(path) + ".json"
    try:
        with open(sidecar_path) as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise CorruptVolumeFile(f"missing sidecar {sidecar_path}")
    except json.JSONDecodeError as e:
        raise CorruptVolumeFile(f"unreadable sidecar {sidecar_path}: {e}")
    for key in ("kind", "shape", "spacing", "dtype", "id"):
        if key not in meta:
            raise CorruptVolumeFile(f"sidecar {sidecar_path} lacks required key {key!r}")
    return meta


def _read_payload(path: Path, meta: dict) -> np.ndarray:
    shape = tuple(int(s) for s in meta["shape"])
    dtype = np.dtype(meta["dtype"])
    flat = np.fromfile(path, dtype=dtype)
    if flat.size != int(np.prod(shape)):
        raise CorruptVolumeFile(
            f"{path}: payload holds {flat.size} scalars but sidecar shape {shape} "
            f"needs {int(np.prod(shape))}"
        )
    return flat.reshape(shape)


def save_volume(v: Volume, path: str | Path):
    _write_payload(
        Path(path),
        v.data,
        VOLUME_DTYPE,
        {
            "kind": "volume",
            "shape": list(v.shape),
            "spacing": list(v.spacing),
            "dtype": VOLUME_DTYPE.str,
            "id": v.id,
        },
    )


def load_volume(path: str | Path) -> Volume:
    meta = _read_sidecar(Path(path))
    if meta["kind"] != "volume":
        raise CorruptVolumeFile(f"{path}: sidecar kind {meta['kind']!r}, expected 'volume'")
    return Volume(_read_payload(Path(path), meta), tuple(meta["spacing"]), meta["id"])


def save_labelmap(l: LabelMap, path: str | Path):
    _write_payload(
        Path(path),
        l.data,
        LABEL_DTYPE,
        {
            "kind": "labels",
            "shape": list(l.shape),
            "spacing": list(l.spacing),
            "dtype": LABEL_DTYPE.str,
            "id": l.id,
            "class_set": list(l.class_set),
        },
    )


def load_labelmap(path: str | Path) -> LabelMap:
    meta = _read_sidecar(Path(path))
    if meta["kind"] != "labels":
        raise CorruptVolumeFile(f"{path}: sidecar kind {meta['kind']!r}, expected 'labels'")
    return LabelMap(
        _read_payload(Path(path), meta),
        tuple(meta["spacing"]),
        meta["id"],
        class_set=tuple(meta.get("class_set", (0, 1, 2))),
    )


@dataclass(frozen=True)
class CaseRecord:
    """One manifest entry; paths are relative to the dataset root."""

    id: str
    split: str  # "labeled" | "unlabeled"
    image: str
    organ: str
    tumor: str | None = None


def write_manifest(root: str | Path, records: list[CaseRecord], meta: dict | None = None):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": MANIFEST_FORMAT,
        **(meta or {}),
        "cases": [
            {"id": r.id, "split": r.split, "image": r.image, "organ": r.organ, "tumor": r.tumor}
            for r in records
        ],
    }
    with open(root / MANIFEST_NAME, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def read_manifest(root: str | Path) -> tuple[list[CaseRecord], dict]:
    root = Path(root)
    try:
        with open(root / MANIFEST_NAME) as fh:
            doc = json.load(fh)
    except (FileNotFoundError, json.JSONDecodeError) as e:
        raise CorruptVolumeFile(f"cannot read dataset manifest in {root}: {e}")
    if doc.get("format") != MANIFEST_FORMAT:
        raise CorruptVolumeFile(f"{root}: unknown manifest format {doc.get('format')!r}")
    records = [
        CaseRecord(c["id"], c["split"], c["image"], c["organ"], c.get("tumor"))
        for c in doc["cases"]
    ]
    meta = {k: v for k, v in doc.items() if k != "cases"}
    return records, meta


def load_case(root: str | Path, record: CaseRecord) -> tuple[Volume, LabelMap, LabelMap | None]:
    """Load one case and check image/label shape agreement."""
    root = Path(root)
    image = load_volume(root / record.image)
    organ = load_labelmap(root / record.organ)
    if organ.shape != image.shape:
        raise ShapeMismatch(
            f"case {record.id}: organ labels {organ.shape} vs image {image.shape}"
        )
    tumor = None
    if record.tumor is not None:
        tumor = load_labelmap(root / record.tumor)
        if tumor.shape != image.shape:
            raise ShapeMismatch(
                f"case {record.id}: tumor labels {tumor.shape} vs image {image.shape}"
            )
    return image, organ, tumor
