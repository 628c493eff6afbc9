"""Project manifest: the persistent unit of work, plus its on-disk store.

One JSON document holds intrinsics, the board spec, model references,
sessions of frames with camera poses / annotations / derived labels, the
domain-randomization config, and the dataset split config. Poses are stored
as quaternion (w, x, y, z) plus translation in meters; intrinsics in pixels.
Writes are atomic (temp file + rename) and validated before commit.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from filelock import FileLock

from .errors import ValidationError
from .geometry import CameraIntrinsics, RigidTransform, UnitQuat
from .meshio import load_mesh
from .model import ObjectModel

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    clamped: bool = False

    def __post_init__(self) -> None:
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValidationError("bounding box corners are not ordered")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


@dataclass(frozen=True)
class BoardSpec:
    """Inner-corner grid of the checkerboard marker."""

    rows: int
    cols: int
    square_size: float  # meters

    def __post_init__(self) -> None:
        if self.rows < 2 or self.cols < 2:
            raise ValidationError("board needs at least a 2x2 inner-corner grid")
        if self.square_size <= 0:
            raise ValidationError("board square size must be positive")

    def corner_grid(self) -> np.ndarray:
        """Row-major (rows*cols, 2) planar corner coordinates in meters."""
        out = np.empty((self.rows * self.cols, 2))
        k = 0
        for r in range(self.rows):
            for c in range(self.cols):
                out[k] = (c * self.square_size, r * self.square_size)
                k += 1
        return out


@dataclass
class KeypointLabel:
    keypoint_id: str
    u: float
    v: float
    visible: bool


@dataclass
class FrameLabels:
    keypoints: list[KeypointLabel]
    bbox: Optional[BBox] = None


@dataclass
class FrameAnnotations:
    points: list[tuple[str, tuple[float, float]]]
    annotator: str = ""
    revision: int = 0


@dataclass
class FrameRecord:
    frame_id: str
    image_path: str
    camera_pose_in_marker: Optional[RigidTransform] = None
    annotations: Optional[FrameAnnotations] = None
    labels: Optional[FrameLabels] = None
    valid: bool = True
    board_reprojection_px: Optional[float] = None


@dataclass
class Session:
    session_id: str
    frames: list[FrameRecord] = field(default_factory=list)
    object_pose_in_marker: Optional[RigidTransform] = None
    solve_rmsd: Optional[float] = None

    def frame(self, frame_id: str) -> FrameRecord:
        for fr in self.frames:
            if fr.frame_id == frame_id:
                return fr
        raise KeyError(frame_id)


@dataclass
class DRConfig:
    n_samples: int = 2000
    rotation_deg: tuple[float, float] = (-45.0, 45.0)
    scale: tuple[float, float] = (0.7, 1.3)
    brightness: tuple[float, float] = (0.6, 1.4)
    saturation: tuple[float, float] = (0.6, 1.4)
    background_dir: str = ""
    real_dr_ratio: str = "1:1"
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_samples < 0:
            raise ValidationError("n_samples must be non-negative")
        for name in ("rotation_deg", "scale", "brightness", "saturation"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValidationError(f"{name} range is not ordered")
        parse_ratio(self.real_dr_ratio)


def parse_ratio(text: str) -> tuple[float, float]:
    """Parse 'real:dr' (e.g. '1:1', '3:7') into non-negative shares."""
    parts = text.split(":")
    if len(parts) != 2:
        raise ValidationError(f"ratio {text!r} must look like 'real:dr'")
    try:
        real, dr = float(parts[0]), float(parts[1])
    except ValueError as exc:
        raise ValidationError(f"ratio {text!r} is not numeric") from exc
    if real < 0 or dr < 0 or real + dr == 0:
        raise ValidationError(f"ratio {text!r} must have a positive total")
    return real, dr


@dataclass
class SplitConfig:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.train_fraction <= 1.0):
            raise ValidationError("train_fraction must be inside [0, 1]")


@dataclass
class ProjectManifest:
    project_id: str
    intrinsics: CameraIntrinsics
    board: BoardSpec
    mesh_path: str
    keypoints_path: str
    sessions: list[Session] = field(default_factory=list)
    dr: Optional[DRConfig] = None
    split: SplitConfig = field(default_factory=SplitConfig)
    revision: int = 0
    schema_version: int = SCHEMA_VERSION

    def session(self, session_id: str) -> Session:
        for s in self.sessions:
            if s.session_id == session_id:
                return s
        raise KeyError(session_id)

    def find_frame(self, frame_id: str) -> tuple[Session, FrameRecord]:
        for s in self.sessions:
            for fr in s.frames:
                if fr.frame_id == frame_id:
                    return s, fr
        raise KeyError(frame_id)


# ---------------------------------------------------------------------------
# JSON (de)serialization


def pose_to_dict(t: RigidTransform) -> dict:
    return {
        "quat_wxyz": [float(v) for v in t.rotation.wxyz],
        "t_xyz": [float(v) for v in t.translation],
        "from_frame": t.from_frame,
        "to_frame": t.to_frame,
    }


def pose_from_dict(d: dict) -> RigidTransform:
    return RigidTransform(
        UnitQuat(d["quat_wxyz"]),
        np.asarray(d["t_xyz"], dtype=float),
        d.get("from_frame", ""),
        d.get("to_frame", ""),
    )


def _opt(value, conv):
    return None if value is None else conv(value)


def bbox_to_dict(b: BBox) -> dict:
    return {
        "x_min": b.x_min,
        "y_min": b.y_min,
        "x_max": b.x_max,
        "y_max": b.y_max,
        "clamped": b.clamped,
    }


def bbox_from_dict(d: dict) -> BBox:
    return BBox(d["x_min"], d["y_min"], d["x_max"], d["y_max"], d.get("clamped", False))


def _labels_to_dict(labels: FrameLabels) -> dict:
    return {
        "keypoints": [
            {"id": k.keypoint_id, "u": k.u, "v": k.v, "visible": k.visible}
            for k in labels.keypoints
        ],
        "bbox": _opt(labels.bbox, bbox_to_dict),
    }


def _labels_from_dict(d: dict) -> FrameLabels:
    return FrameLabels(
        [KeypointLabel(k["id"], k["u"], k["v"], k["visible"]) for k in d["keypoints"]],
        _opt(d.get("bbox"), bbox_from_dict),
    )


def _annotations_to_dict(ann: FrameAnnotations) -> dict:
    return {
        "points": [{"keypoint_id": kid, "u": uv[0], "v": uv[1]} for kid, uv in ann.points],
        "annotator": ann.annotator,
        "revision": ann.revision,
    }


def _annotations_from_dict(d: dict) -> FrameAnnotations:
    return FrameAnnotations(
        [(p["keypoint_id"], (p["u"], p["v"])) for p in d["points"]],
        d.get("annotator", ""),
        d.get("revision", 0),
    )


def _frame_to_dict(fr: FrameRecord) -> dict:
    return {
        "frame_id": fr.frame_id,
        "image_path": fr.image_path,
        "camera_pose_in_marker": _opt(fr.camera_pose_in_marker, pose_to_dict),
        "annotations": _opt(fr.annotations, _annotations_to_dict),
        "labels": _opt(fr.labels, _labels_to_dict),
        "valid": fr.valid,
        "board_reprojection_px": fr.board_reprojection_px,
    }


def _frame_from_dict(d: dict) -> FrameRecord:
    return FrameRecord(
        frame_id=d["frame_id"],
        image_path=d["image_path"],
        camera_pose_in_marker=_opt(d.get("camera_pose_in_marker"), pose_from_dict),
        annotations=_opt(d.get("annotations"), _annotations_from_dict),
        labels=_opt(d.get("labels"), _labels_from_dict),
        valid=d.get("valid", True),
        board_reprojection_px=d.get("board_reprojection_px"),
    )


def manifest_to_dict(m: ProjectManifest) -> dict:
    return {
        "schema_version": m.schema_version,
        "project_id": m.project_id,
        "revision": m.revision,
        "intrinsics": {
            "fx": m.intrinsics.fx,
            "fy": m.intrinsics.fy,
            "px": m.intrinsics.px,
            "py": m.intrinsics.py,
            "width": m.intrinsics.width,
            "height": m.intrinsics.height,
        },
        "board": {
            "rows": m.board.rows,
            "cols": m.board.cols,
            "square_size": m.board.square_size,
        },
        "model": {"mesh_path": m.mesh_path, "keypoints_path": m.keypoints_path},
        "dr": None
        if m.dr is None
        else {
            "n_samples": m.dr.n_samples,
            "rotation_deg": list(m.dr.rotation_deg),
            "scale": list(m.dr.scale),
            "brightness": list(m.dr.brightness),
            "saturation": list(m.dr.saturation),
            "background_dir": m.dr.background_dir,
            "real_dr_ratio": m.dr.real_dr_ratio,
            "seed": m.dr.seed,
        },
        "split": {"train_fraction": m.split.train_fraction, "seed": m.split.seed},
        "sessions": [
            {
                "session_id": s.session_id,
                "object_pose_in_marker": _opt(s.object_pose_in_marker, pose_to_dict),
                "solve_rmsd": s.solve_rmsd,
                "frames": [_frame_to_dict(fr) for fr in s.frames],
            }
            for s in m.sessions
        ],
    }


def manifest_from_dict(d: dict) -> ProjectManifest:
    try:
        version = d["schema_version"]
        if version != SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {version}")
        intr = d["intrinsics"]
        dr = d.get("dr")
        manifest = ProjectManifest(
            project_id=d["project_id"],
            intrinsics=CameraIntrinsics(
                intr["fx"], intr["fy"], intr["px"], intr["py"], intr["width"], intr["height"]
            ),
            board=BoardSpec(d["board"]["rows"], d["board"]["cols"], d["board"]["square_size"]),
            mesh_path=d["model"]["mesh_path"],
            keypoints_path=d["model"]["keypoints_path"],
            dr=None
            if dr is None
            else DRConfig(
                n_samples=dr["n_samples"],
                rotation_deg=tuple(dr["rotation_deg"]),
                scale=tuple(dr["scale"]),
                brightness=tuple(dr["brightness"]),
                saturation=tuple(dr["saturation"]),
                background_dir=dr.get("background_dir", ""),
                real_dr_ratio=dr.get("real_dr_ratio", "1:1"),
                seed=dr.get("seed", 0),
            ),
            split=SplitConfig(**d.get("split", {})),
            revision=d.get("revision", 0),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed manifest: {exc}") from exc
    for s in d.get("sessions", []):
        session = Session(
            session_id=s["session_id"],
            object_pose_in_marker=_opt(s.get("object_pose_in_marker"), pose_from_dict),
            solve_rmsd=s.get("solve_rmsd"),
            frames=[_frame_from_dict(fr) for fr in s.get("frames", [])],
        )
        manifest.sessions.append(session)
    _check_invariants(manifest)
    return manifest


def _check_invariants(m: ProjectManifest) -> None:
    seen_sessions: set[str] = set()
    seen_frames: set[str] = set()
    for s in m.sessions:
        if s.session_id in seen_sessions:
            raise ValidationError(f"duplicate session id {s.session_id!r}")
        seen_sessions.add(s.session_id)
        for fr in s.frames:
            if fr.frame_id in seen_frames:
                raise ValidationError(f"duplicate frame id {fr.frame_id!r}")
            seen_frames.add(fr.frame_id)
            if fr.annotations is not None:
                ids = [kid for kid, _ in fr.annotations.points]
                if len(ids) != len(set(ids)):
                    raise ValidationError(
                        f"frame {fr.frame_id!r} has duplicate annotated keypoints"
                    )


def serialize_manifest(m: ProjectManifest) -> str:
    return json.dumps(manifest_to_dict(m), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Store


class ProjectStore:
    """Single-writer persistence for one project directory.

    The manifest is re-validated on every write and replaced atomically, so
    a reader never observes a torn or invalid file. A no-op save (identical
    payload) leaves the file byte-identical, which keeps re-running pipeline
    commands idempotent.
    """

    MANIFEST_NAME = "manifest.json"

    def __init__(self, root) -> None:
        self.root = Path(root)
        self.lock = threading.RLock()
        self._file_lock = FileLock(str(self.root / ".poselab.lock"))
        self._manifest: Optional[ProjectManifest] = None
        self._model: Optional[ObjectModel] = None

    @property
    def manifest_path(self) -> Path:
        return self.root / self.MANIFEST_NAME

    @classmethod
    def create(cls, root, manifest: ProjectManifest) -> "ProjectStore":
        store = cls(root)
        store.root.mkdir(parents=True, exist_ok=True)
        if store.manifest_path.exists():
            raise ValidationError(f"project already exists at {store.root}")
        store.save(manifest)
        return store

    def load(self) -> ProjectManifest:
        with self.lock:
            text = self.manifest_path.read_text()
            self._manifest = manifest_from_dict(json.loads(text))
            return self._manifest

    @property
    def manifest(self) -> ProjectManifest:
        with self.lock:
            if self._manifest is None:
                return self.load()
            return self._manifest

    def save(self, manifest: ProjectManifest) -> bool:
        """Persist if changed; returns True when a write happened."""
        with self.lock, self._file_lock:
            candidate = manifest_to_dict(manifest)
            # validate before commit: must round-trip
            manifest_from_dict(json.loads(json.dumps(candidate)))

            current_payload = None
            if self.manifest_path.exists():
                current = json.loads(self.manifest_path.read_text())
                current_payload = {k: v for k, v in current.items() if k != "revision"}
                manifest.revision = current["revision"]
            payload = {k: v for k, v in candidate.items() if k != "revision"}
            if current_payload == payload:
                self._manifest = manifest
                return False

            manifest.revision = (manifest.revision or 0) + 1 if current_payload is not None else 0
            candidate["revision"] = manifest.revision
            tmp = self.manifest_path.with_suffix(".json.tmp")
            tmp.write_text(json.dumps(candidate, indent=2, sort_keys=True) + "\n")
            tmp.replace(self.manifest_path)
            self._manifest = manifest
            return True

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.root / p

    def object_model(self) -> ObjectModel:
        with self.lock:
            if self._model is None:
                m = self.manifest
                verts, faces = load_mesh(self.resolve(m.mesh_path))
                keypoints = load_keypoints(self.resolve(m.keypoints_path))
                self._model = ObjectModel(keypoints, verts, faces)
            return self._model


def load_keypoints(path) -> list[tuple[str, np.ndarray]]:
    """Ordered named keypoints from JSON: [{"id": ..., "xyz": [x, y, z]}, ...]."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise ValidationError(f"{path}: expected a JSON array of keypoints")
    out = []
    for i, item in enumerate(doc):
        try:
            out.append((str(item["id"]), np.asarray(item["xyz"], dtype=float).reshape(3)))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}: bad keypoint at index {i}: {exc}") from exc
    return out


def save_keypoints(path, keypoints: list[tuple[str, np.ndarray]]) -> None:
    doc = [{"id": kid, "xyz": [float(v) for v in p]} for kid, p in keypoints]
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_intrinsics(path) -> CameraIntrinsics:
    doc = json.loads(Path(path).read_text())
    try:
        return CameraIntrinsics(
            doc["fx"], doc["fy"], doc["px"], doc["py"], doc["width"], doc["height"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: bad intrinsics: {exc}") from exc
