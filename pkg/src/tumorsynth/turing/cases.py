"""Reader-study case assembly: balanced blinded case sets with rendered
orthogonal slices and tumor-position indicators.

Ground truth (real vs synthetic) lives only in the server-side case index;
client payloads are built by `client_view` and never carry a truth field.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import InsufficientPool
from ..volume import LabelMap, Volume

DEFAULT_TYPE_TAGS = ("liver", "pancreas", "kidney", "lung", "covid19")
VIEWS = ("axial", "coronal", "sagittal")
TRUTH_REAL = "real"
TRUTH_SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class TuringDesign:
    """Per-type case counts; defaults give 90 cases, 45 real / 45 synthetic."""

    type_tags: tuple[str, ...] = DEFAULT_TYPE_TAGS
    per_type: int = 18
    real_per_type: int = 9

    def __post_init__(self):
        object.__setattr__(self, "type_tags", tuple(self.type_tags))
        if not self.type_tags:
            raise ValueError("at least one tumor type tag is required")
        if not 0 < self.real_per_type < self.per_type:
            raise ValueError(
                f"need 0 < real_per_type < per_type, got {self.real_per_type}/{self.per_type}"
            )

    @property
    def synthetic_per_type(self) -> int:
        return self.per_type - self.real_per_type

    @property
    def total(self) -> int:
        return self.per_type * len(self.type_tags)


@dataclass(frozen=True)
class PoolEntry:
    """A candidate case: volume, its single tumor's label, type tag, truth."""

    case_id: str
    type_tag: str
    truth: str
    volume: Volume
    tumor: LabelMap


@dataclass(frozen=True)
class TuringCase:
    """One assembled study case; `truth` must never reach a client payload."""

    case_id: str
    type_tag: str
    truth: str
    slices: dict = field(default_factory=dict)  # view -> image file name
    position: dict = field(default_factory=dict)  # view -> (row, col) fractions


def client_view(case: TuringCase, asset_prefix: str = "") -> dict:
    """Blinded client payload: everything about the case except its truth."""
    return {
        "case_id": case.case_id,
        "type_tag": case.type_tag,
        "slices": {view: f"{asset_prefix}{name}" for view, name in case.slices.items()},
        "position": case.position,
    }


def build_case_set(
    real_pool: list[PoolEntry],
    synthetic_pool: list[PoolEntry],
    design: TuringDesign = TuringDesign(),
    seed: int = 0,
) -> list[TuringCase]:
    """Draw an exactly balanced, seeded-shuffled case list from the pools."""
    rng = np.random.default_rng(seed)
    chosen: list[PoolEntry] = []
    for tag in design.type_tags:
        for pool, want, kind in (
            (real_pool, design.real_per_type, TRUTH_REAL),
            (synthetic_pool, design.synthetic_per_type, TRUTH_SYNTHETIC),
        ):
            candidates = [e for e in pool if e.type_tag == tag]
            if len(candidates) < want:
                raise InsufficientPool(
                    f"type {tag!r}: need {want} {kind} cases, pool has {len(candidates)}"
                )
            picks = rng.choice(len(candidates), size=want, replace=False)
            chosen.extend(candidates[int(i)] for i in picks)
    order = rng.permutation(len(chosen))
    cases = []
    for i in order:
        entry = chosen[int(i)]
        cases.append(
            TuringCase(
                case_id=entry.case_id,
                type_tag=entry.type_tag,
                truth=entry.truth,
                slices={view: f"{entry.case_id}_{view}.png" for view in VIEWS},
                position=_positions(entry),
            )
        )
    return cases


def _positions(entry: PoolEntry) -> dict:
    """Tumor centroid as (row, col) fractions per orthogonal view."""
    coords = np.argwhere(entry.tumor.data > 0)
    cz, cy, cx = coords.mean(axis=0)
    dz, dy, dx = entry.tumor.shape
    return {
        "axial": [cy / dy, cx / dx],
        "coronal": [cz / dz, cx / dx],
        "sagittal": [cz / dz, cy / dy],
    }


def _slice_images(entry: PoolEntry) -> dict[str, np.ndarray]:
    coords = np.argwhere(entry.tumor.data > 0)
    cz, cy, cx = (int(round(c)) for c in coords.mean(axis=0))
    data = entry.volume.data
    return {
        "axial": data[cz, :, :],
        "coronal": data[:, cy, :],
        "sagittal": data[:, :, cx],
    }


def render_case_assets(entry: PoolEntry, out_dir: Path):
    """Write the three mid-tumor slices as lossless 8-bit grayscale PNGs."""
    out_dir.mkdir(parents=True, exist_ok=True)
    for view, plane in _slice_images(entry).items():
        img = np.clip(plane, 0.0, 1.0)
        Image.fromarray((img * 255).round().astype(np.uint8), mode="L").save(
            out_dir / f"{entry.case_id}_{view}.png"
        )


def prepare_reader_study(
    cases_dir: str | Path,
    real_pool: list[PoolEntry],
    synthetic_pool: list[PoolEntry],
    design: TuringDesign = TuringDesign(),
    seed: int = 0,
) -> list[TuringCase]:
    """Assemble a case set and persist its assets + server-side index."""
    cases_dir = Path(cases_dir)
    cases = build_case_set(real_pool, synthetic_pool, design, seed)
    by_id = {e.case_id: e for e in real_pool + synthetic_pool}
    for case in cases:
        render_case_assets(by_id[case.case_id], cases_dir / "assets")
    index = {
        "design": {
            "type_tags": list(design.type_tags),
            "per_type": design.per_type,
            "real_per_type": design.real_per_type,
        },
        "seed": seed,
        "cases": [
            {
                "case_id": c.case_id,
                "type_tag": c.type_tag,
                "truth": c.truth,
                "slices": c.slices,
                "position": c.position,
            }
            for c in cases
        ],
    }
    with open(cases_dir / "cases.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return cases


def load_reader_study(cases_dir: str | Path) -> list[TuringCase]:
    cases_dir = Path(cases_dir)
    with open(cases_dir / "cases.json") as fh:
        index = json.load(fh)
    return [
        TuringCase(
            case_id=c["case_id"],
            type_tag=c["type_tag"],
            truth=c["truth"],
            slices=c["slices"],
            position=c["position"],
        )
        for c in index["cases"]
    ]
