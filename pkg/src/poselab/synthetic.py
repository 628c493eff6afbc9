"""Deterministic synthetic scenes and pose-error metrics.

Scenes place cameras on an arc looking at a posed object in the marker
frame, project its keypoints per view, optionally corrupt them with pixel
noise and planted outliers, and sample a per-frame point cloud from the
mesh surface. Every random draw derives from (seed, frame index), so
regeneration is bit-identical and per-frame work can run in parallel.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    UnitQuat,
    project_points,
    quat_from_rpy,
    rpy_from_quat,
)
from .meshio import load_ply_points, save_ply_points
from .model import ObjectModel, PointCloud

DEFAULT_INTRINSICS = CameraIntrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)
DEFAULT_CLOUD_DENSITY = 250_000.0  # points per m^2 (one per 4 mm^2)


def make_box_model(
    size: tuple[float, float, float] = (0.3, 0.2, 0.1),
    subdivisions: int = 1,
) -> ObjectModel:
    """Box mesh with 20 keypoints: corners, face centers, edge midpoints.

    `subdivisions` splits each face into an n x n grid of quads, giving the
    mesh enough vertices for vertex-based consumers (ICP, depth buffers).
    """
    hx, hy, hz = (s / 2.0 for s in size)
    corners = np.array(
        [
            [sx * hx, sy * hy, sz * hz]
            for sx in (-1, 1)
            for sy in (-1, 1)
            for sz in (-1, 1)
        ]
    )
    quads = [
        (0, 1, 3, 2),
        (4, 6, 7, 5),
        (0, 4, 5, 1),
        (2, 3, 7, 6),
        (0, 2, 6, 4),
        (1, 5, 7, 3),
    ]
    verts_list: list[np.ndarray] = []
    faces = []
    n = max(1, int(subdivisions))
    for a, b, c, d in quads:
        base = len(verts_list)
        pa, pb, pc, pd = corners[a], corners[b], corners[c], corners[d]
        for i in range(n + 1):
            for j in range(n + 1):
                u, v = i / n, j / n
                verts_list.append(
                    (1 - u) * (1 - v) * pa + u * (1 - v) * pb + u * v * pc + (1 - u) * v * pd
                )
        for i in range(n):
            for j in range(n):
                k00 = base + i * (n + 1) + j
                k10 = base + (i + 1) * (n + 1) + j
                k11 = base + (i + 1) * (n + 1) + j + 1
                k01 = base + i * (n + 1) + j + 1
                faces.append([k00, k10, k11])
                faces.append([k00, k11, k01])
    verts = np.array(verts_list)

    keypoints: list[tuple[str, np.ndarray]] = []
    for i, v in enumerate(corners):
        keypoints.append((f"c{i}", v.copy()))
    face_centers = [
        ("fx-", (-hx, 0, 0)),
        ("fx+", (hx, 0, 0)),
        ("fy-", (0, -hy, 0)),
        ("fy+", (0, hy, 0)),
        ("fz-", (0, 0, -hz)),
        ("fz+", (0, 0, hz)),
    ]
    for name, p in face_centers:
        keypoints.append((name, np.array(p, dtype=float)))
    edges = [
        ("e0", (hx, hy, 0)),
        ("e1", (hx, -hy, 0)),
        ("e2", (-hx, hy, 0)),
        ("e3", (-hx, -hy, 0)),
        ("e4", (hx, 0, hz)),
        ("e5", (-hx, 0, -hz)),
    ]
    for name, p in edges:
        keypoints.append((name, np.array(p, dtype=float)))
    return ObjectModel(keypoints, verts, np.array(faces, dtype=int))


def look_at(
    position,
    target,
    up=(0.0, 0.0, 1.0),
    from_frame: str = "camera",
    to_frame: str = "marker",
) -> RigidTransform:
    """Camera pose with +z toward `target` and +y as close to 'down' as possible."""
    position = np.asarray(position, dtype=float)
    z = np.asarray(target, dtype=float) - position
    z = z / np.linalg.norm(z)
    up = np.asarray(up, dtype=float)
    x = np.cross(z, up)
    if np.linalg.norm(x) < 1e-9:  # looking along the up axis
        x = np.cross(z, np.array([1.0, 0.0, 0.0]))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    rot = np.column_stack([x, y, z])
    return RigidTransform(UnitQuat.from_matrix(rot), position, from_frame, to_frame)


def sample_mesh_surface(
    vertices: np.ndarray,
    faces: np.ndarray,
    rng: np.random.Generator,
    density: float = DEFAULT_CLOUD_DENSITY,
    n_points: Optional[int] = None,
) -> np.ndarray:
    """Area-weighted uniform samples on a triangle mesh."""
    tri = vertices[faces]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    total = float(areas.sum())
    if total <= 0:
        raise ValueError("mesh has zero surface area")
    if n_points is None:
        n_points = max(1, int(round(total * density)))
    face_idx = rng.choice(len(faces), size=n_points, p=areas / total)
    u = rng.random(n_points)
    v = rng.random(n_points)
    su = np.sqrt(u)
    bary = np.column_stack([1.0 - su, su * (1.0 - v), su * v])
    return np.einsum("nk,nkd->nd", bary, tri[face_idx])


@dataclass
class SceneConfig:
    n_views: int = 5
    ring_radius: float = 1.0
    arc_deg: float = 60.0
    elevation: float = 0.4
    pixel_sigma: float = 0.0
    cloud_sigma: float = 0.0
    outlier_rate: float = 0.0
    outlier_min_shift_px: float = 50.0
    cloud_mode: str = "none"  # none | keypoints | surface | both
    cloud_density: float = DEFAULT_CLOUD_DENSITY
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_views < 2:
            raise ValueError("need at least 2 views")
        if self.cloud_mode not in ("none", "keypoints", "surface", "both"):
            raise ValueError(f"unknown cloud_mode {self.cloud_mode!r}")
        if not (0.0 <= self.outlier_rate < 1.0):
            raise ValueError("outlier_rate must be in [0, 1)")


@dataclass
class SyntheticFrame:
    frame_id: str
    camera_pose_in_marker: RigidTransform
    keypoints_true: dict[str, np.ndarray]  # noiseless pixels, in-front keypoints
    keypoints_noisy: dict[str, np.ndarray]
    outlier_ids: list[str]
    cloud: Optional[PointCloud] = None  # camera frame

    def object_pose_in_camera(self, object_pose_in_marker: RigidTransform) -> RigidTransform:
        return self.camera_pose_in_marker.invert().compose(object_pose_in_marker)


@dataclass
class SyntheticScene:
    config: SceneConfig
    intrinsics: CameraIntrinsics
    model: ObjectModel
    object_pose_in_marker: RigidTransform
    frames: list[SyntheticFrame] = field(default_factory=list)


def default_object_pose() -> RigidTransform:
    return RigidTransform(
        quat_from_rpy(0.0, 0.0, 25.0), np.array([0.18, 0.12, 0.06]), "object", "marker"
    )


def generate_scene(
    model: ObjectModel,
    cfg: SceneConfig,
    intr: CameraIntrinsics = DEFAULT_INTRINSICS,
    object_pose_in_marker: Optional[RigidTransform] = None,
) -> SyntheticScene:
    """Build a deterministic multi-view scene around a posed object."""
    obj_pose = object_pose_in_marker or default_object_pose()
    target = obj_pose.apply(model.keypoint_array().mean(axis=0))
    scene = SyntheticScene(cfg, intr, model, obj_pose)

    kp_ids = model.keypoint_ids
    kp_obj = model.keypoint_array()
    n_out = int(math.floor(cfg.outlier_rate * len(kp_ids)))

    for li in range(cfg.n_views):
        rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, li)))
        frac = li / (cfg.n_views - 1) if cfg.n_views > 1 else 0.5
        theta = math.radians((frac - 0.5) * cfg.arc_deg)
        position = target + np.array(
            [
                cfg.ring_radius * math.cos(theta),
                cfg.ring_radius * math.sin(theta),
                cfg.elevation,
            ]
        )
        cam_pose = look_at(position, target)
        obj_in_cam = cam_pose.invert().compose(obj_pose)

        kp_cam = obj_in_cam.apply(kp_obj)
        front = kp_cam[:, 2] > 0
        pixels = np.full((len(kp_ids), 2), np.nan)
        if front.any():
            pixels[front] = project_points(intr, kp_cam[front])

        keypoints_true: dict[str, np.ndarray] = {}
        for i, kid in enumerate(kp_ids):
            if front[i]:
                keypoints_true[kid] = pixels[i].copy()

        keypoints_noisy = {
            kid: px + rng.normal(0.0, cfg.pixel_sigma, size=2)
            if cfg.pixel_sigma > 0
            else px.copy()
            for kid, px in keypoints_true.items()
        }

        outlier_ids: list[str] = []
        if n_out > 0:
            visible_ids = sorted(keypoints_true.keys())
            chosen = rng.choice(len(visible_ids), size=min(n_out, len(visible_ids)), replace=False)
            for ci in sorted(chosen):
                kid = visible_ids[ci]
                outlier_ids.append(kid)
                orig = keypoints_noisy[kid]
                for _ in range(100):
                    candidate = np.array(
                        [rng.uniform(0, intr.width), rng.uniform(0, intr.height)]
                    )
                    if np.linalg.norm(candidate - orig) >= cfg.outlier_min_shift_px:
                        keypoints_noisy[kid] = candidate
                        break

        cloud = None
        if cfg.cloud_mode != "none":
            pts_obj: list[np.ndarray] = []
            if cfg.cloud_mode in ("surface", "both"):
                pts_obj.append(
                    sample_mesh_surface(
                        model.mesh_vertices, model.mesh_faces, rng, cfg.cloud_density
                    )
                )
            if cfg.cloud_mode in ("keypoints", "both"):
                pts_obj.append(kp_obj.copy())
            pts_cam = obj_in_cam.apply(np.vstack(pts_obj))
            if cfg.cloud_sigma > 0:
                pts_cam = pts_cam + rng.normal(0.0, cfg.cloud_sigma, size=pts_cam.shape)
            cloud = PointCloud(pts_cam)

        scene.frames.append(
            SyntheticFrame(
                frame_id=f"frame_{li:04d}",
                camera_pose_in_marker=cam_pose,
                keypoints_true=keypoints_true,
                keypoints_noisy=keypoints_noisy,
                outlier_ids=outlier_ids,
                cloud=cloud,
            )
        )
    return scene


@dataclass
class PoseError:
    """Difference between an estimated and a true rigid transform."""

    position_error: float  # meters, Euclidean
    rpy_error: tuple[float, float, float]  # signed degrees, Z-Y-X components
    geodesic_deg: float

    def __post_init__(self) -> None:
        if self.position_error < 0:
            raise ValueError("position error must be non-negative")
        if not (0.0 <= self.geodesic_deg <= 180.0 + 1e-9):
            raise ValueError("geodesic angle must lie in [0, 180] degrees")


def _wrap_deg(a: float) -> float:
    return (a + 180.0) % 360.0 - 180.0


def evaluate(estimate: RigidTransform, truth: RigidTransform) -> PoseError:
    """Position (m), signed per-axis RPY difference (deg), geodesic angle (deg).

    The RPY difference is taken component-wise between the two Z-Y-X
    decompositions; the geodesic angle is reported alongside because the
    per-axis split is convention-sensitive.
    """
    position = float(np.linalg.norm(estimate.translation - truth.translation))
    rpy_est = rpy_from_quat(estimate.rotation)
    rpy_true = rpy_from_quat(truth.rotation)
    rpy = tuple(
        _wrap_deg(a - b)
        for a, b in zip(rpy_est[:3], rpy_true[:3])
    )
    geodesic = math.degrees(estimate.rotation.angle_to(truth.rotation))
    return PoseError(position, rpy, geodesic)


# ---------------------------------------------------------------------------
# Fixture persistence (JSON for poses/pixels, PLY for clouds)


def _pose_to_json(t: RigidTransform) -> dict:
    return {
        "quat_wxyz": [float(v) for v in t.rotation.wxyz],
        "t_xyz": [float(v) for v in t.translation],
        "from_frame": t.from_frame,
        "to_frame": t.to_frame,
    }


def _pose_from_json(d: dict) -> RigidTransform:
    return RigidTransform(
        UnitQuat(d["quat_wxyz"]),
        np.array(d["t_xyz"], dtype=float),
        d.get("from_frame", ""),
        d.get("to_frame", ""),
    )


def dump_scene(scene: SyntheticScene, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "config": asdict(scene.config),
        "intrinsics": asdict(scene.intrinsics),
        "model": {
            "keypoints": [
                {"id": kid, "xyz": [float(v) for v in p]} for kid, p in scene.model.keypoints
            ],
            "vertices": scene.model.mesh_vertices.tolist(),
            "faces": scene.model.mesh_faces.tolist(),
        },
        "object_pose_in_marker": _pose_to_json(scene.object_pose_in_marker),
        "frames": [],
    }
    for fr in scene.frames:
        entry = {
            "frame_id": fr.frame_id,
            "camera_pose_in_marker": _pose_to_json(fr.camera_pose_in_marker),
            "keypoints_true": {k: [float(a) for a in v] for k, v in fr.keypoints_true.items()},
            "keypoints_noisy": {k: [float(a) for a in v] for k, v in fr.keypoints_noisy.items()},
            "outlier_ids": fr.outlier_ids,
            "cloud": None,
        }
        if fr.cloud is not None:
            name = f"cloud_{fr.frame_id}.ply"
            save_ply_points(out / name, fr.cloud.points)
            entry["cloud"] = name
        doc["frames"].append(entry)
    (out / "scene.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_scene(scene_dir) -> SyntheticScene:
    src = Path(scene_dir)
    doc = json.loads((src / "scene.json").read_text())
    model = ObjectModel(
        [(kp["id"], np.array(kp["xyz"], dtype=float)) for kp in doc["model"]["keypoints"]],
        np.array(doc["model"]["vertices"], dtype=float),
        np.array(doc["model"]["faces"], dtype=int),
    )
    scene = SyntheticScene(
        SceneConfig(**doc["config"]),
        CameraIntrinsics(**doc["intrinsics"]),
        model,
        _pose_from_json(doc["object_pose_in_marker"]),
    )
    for fr in doc["frames"]:
        cloud = None
        if fr["cloud"]:
            cloud = PointCloud(load_ply_points(src / fr["cloud"]))
        scene.frames.append(
            SyntheticFrame(
                frame_id=fr["frame_id"],
                camera_pose_in_marker=_pose_from_json(fr["camera_pose_in_marker"]),
                keypoints_true={k: np.array(v) for k, v in fr["keypoints_true"].items()},
                keypoints_noisy={k: np.array(v) for k, v in fr["keypoints_noisy"].items()},
                outlier_ids=list(fr["outlier_ids"]),
                cloud=cloud,
            )
        )
    return scene
