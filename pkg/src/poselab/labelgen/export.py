"""Dataset export: per-image label files plus a provenance index.

One label file per image, same stem: a normalized `bbox cx cy w h` line
followed by `kp <id> <u> <v> <0|1>` lines. The index JSON records the split
and whether each sample is a real frame or a domain-randomized composite.
The real:DR mixing ratio fills its quotas deterministically from the seed,
resampling with replacement when a pool is smaller than its share.
"""

from __future__ import annotations

import json
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..manifest import (
    BBox,
    FrameLabels,
    KeypointLabel,
    ProjectManifest,
    SplitConfig,
    bbox_from_dict,
    bbox_to_dict,
    parse_ratio,
)

DR_INDEX_NAME = "dr_index.json"


@dataclass
class ExportItem:
    name: str  # output stem
    image_path: Path
    labels: FrameLabels
    width: int
    height: int
    source: str  # "real" | "dr"
    origin: str  # frame id or dr sample index


@dataclass
class ExportResult:
    out_dir: Path
    n_real: int
    n_dr: int
    index_path: Path


def format_label_file(labels: FrameLabels, width: int, height: int) -> str:
    """Normalized bbox line plus one keypoint record per line."""
    lines = []
    if labels.bbox is not None:
        b = labels.bbox
        cx = (b.x_min + b.x_max) / 2.0 / width
        cy = (b.y_min + b.y_max) / 2.0 / height
        lines.append(
            f"bbox {cx:.9f} {cy:.9f} {b.width / width:.9f} {b.height / height:.9f}"
        )
    for k in labels.keypoints:
        lines.append(f"kp {k.keypoint_id} {k.u:.9f} {k.v:.9f} {1 if k.visible else 0}")
    return "\n".join(lines) + "\n"


def real_items(manifest: ProjectManifest, resolve) -> list[ExportItem]:
    items = []
    for session in manifest.sessions:
        for fr in session.frames:
            if not fr.valid or fr.labels is None or fr.labels.bbox is None:
                continue
            items.append(
                ExportItem(
                    name=f"real_{fr.frame_id}",
                    image_path=resolve(fr.image_path),
                    labels=fr.labels,
                    width=manifest.intrinsics.width,
                    height=manifest.intrinsics.height,
                    source="real",
                    origin=fr.frame_id,
                )
            )
    return items


def dr_items(project_root: Path) -> list[ExportItem]:
    index_path = project_root / "dr" / DR_INDEX_NAME
    if not index_path.exists():
        return []
    doc = json.loads(index_path.read_text())
    items = []
    for entry in doc.get("samples", []):
        labels = FrameLabels(
            [
                KeypointLabel(k["id"], k["u"], k["v"], bool(k["visible"]))
                for k in entry["keypoints"]
            ],
            bbox_from_dict(entry["bbox"]),
        )
        items.append(
            ExportItem(
                name=f"dr_{entry['index']:06d}",
                image_path=project_root / entry["image"],
                labels=labels,
                width=entry["width"],
                height=entry["height"],
                source="dr",
                origin=str(entry["index"]),
            )
        )
    return items


def select_mixed(
    real: list[ExportItem],
    dr: list[ExportItem],
    ratio: str,
    target: Optional[int],
    seed: int,
) -> list[ExportItem]:
    """Deterministically fill the real/DR quotas implied by the ratio.

    A pool smaller than its quota is topped up by resampling it with
    replacement; an empty pool forfeits its share.
    """
    real_share, dr_share = parse_ratio(ratio)
    if target is None:
        return list(real) + list(dr)
    rng = np.random.default_rng(seed)
    n_real = int(round(target * real_share / (real_share + dr_share)))
    n_dr = target - n_real
    if not real:
        n_real, n_dr = 0, min(n_dr + n_real, target) if dr else 0
    if not dr:
        n_dr, n_real = 0, min(n_real + n_dr, target) if real else 0

    def pick(pool: list[ExportItem], count: int) -> list[ExportItem]:
        if count == 0 or not pool:
            return []
        if count <= len(pool):
            idx = rng.choice(len(pool), size=count, replace=False)
        else:
            idx = np.concatenate(
                [np.arange(len(pool)), rng.choice(len(pool), size=count - len(pool))]
            )
        return [pool[i] for i in sorted(idx.tolist())]

    return pick(real, n_real) + pick(dr, n_dr)


def export_dataset(
    manifest: ProjectManifest,
    project_root: Path,
    out_dir,
    ratio: Optional[str] = None,
    target: Optional[int] = None,
    seed: Optional[int] = None,
    split: Optional[SplitConfig] = None,
) -> ExportResult:
    """Write images, label files, and the dataset index to `out_dir`."""
    project_root = Path(project_root)
    out = Path(out_dir)
    images_dir = out / "images"
    labels_dir = out / "labels"
    out.mkdir(parents=True, exist_ok=True)
    images_dir.mkdir(exist_ok=True)
    labels_dir.mkdir(exist_ok=True)

    def resolve(p):
        path = Path(p)
        return path if path.is_absolute() else project_root / path

    ratio = ratio or (manifest.dr.real_dr_ratio if manifest.dr else "1:1")
    seed = seed if seed is not None else (manifest.dr.seed if manifest.dr else 0)
    split = split or manifest.split

    real = real_items(manifest, resolve)
    dr = dr_items(project_root)
    chosen = select_mixed(real, dr, ratio, target, seed)

    split_rng = np.random.default_rng(split.seed)
    index_entries = []
    used_names: dict[str, int] = {}
    for item in chosen:
        name = item.name
        n_seen = used_names.get(item.name, 0)
        used_names[item.name] = n_seen + 1
        if n_seen:  # oversampled duplicate gets its own stem
            name = f"{item.name}_dup{n_seen}"
        image_out = images_dir / f"{name}{item.image_path.suffix.lower() or '.png'}"
        try:
            shutil.copyfile(item.image_path, image_out)
        except OSError as exc:
            raise OSError(f"failed to copy {item.image_path} -> {image_out}: {exc}") from exc
        label_out = labels_dir / f"{name}.txt"
        label_out.write_text(format_label_file(item.labels, item.width, item.height))

        subset = "train" if float(split_rng.random()) < split.train_fraction else "val"
        index_entries.append(
            {
                "image": str(image_out.relative_to(out)),
                "label": str(label_out.relative_to(out)),
                "source": item.source,
                "origin": item.origin,
                "split": subset,
                "bbox": None if item.labels.bbox is None else bbox_to_dict(item.labels.bbox),
            }
        )

    index_path = out / "index.json"
    index_path.write_text(
        json.dumps(
            {
                "schema_version": 1,
                "ratio": ratio,
                "seed": seed,
                "n_real": sum(1 for e in index_entries if e["source"] == "real"),
                "n_dr": sum(1 for e in index_entries if e["source"] == "dr"),
                "items": index_entries,
            },
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return ExportResult(
        out,
        sum(1 for e in index_entries if e["source"] == "real"),
        sum(1 for e in index_entries if e["source"] == "dr"),
        index_path,
    )


def write_dr_outputs(project_root: Path, samples, seed: int) -> Path:
    """Persist DR composites under <project>/dr with their label index."""
    from ..imgio import save_png

    project_root = Path(project_root)
    dr_dir = project_root / "dr"
    dr_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        rel = f"dr/dr_{s.index:06d}.png"
        save_png(project_root / rel, s.image)
        entries.append(
            {
                "index": s.index,
                "image": rel,
                "width": int(s.image.shape[1]),
                "height": int(s.image.shape[0]),
                "keypoints": [
                    {"id": k.keypoint_id, "u": k.u, "v": k.v, "visible": k.visible}
                    for k in s.keypoints
                ],
                "bbox": bbox_to_dict(s.bbox),
                "similarity": {
                    "rotation_deg": s.similarity.rotation_deg,
                    "scale": s.similarity.scale,
                    "matrix": s.similarity.matrix.tolist(),
                },
                "background_index": s.background_index,
                "patch_index": s.patch_index,
            }
        )
    index_path = dr_dir / DR_INDEX_NAME
    index_path.write_text(
        json.dumps(
            {"schema_version": 1, "seed": seed, "samples": entries},
            indent=2,
            sort_keys=True,
        )
        + "\n"
    )
    return index_path
