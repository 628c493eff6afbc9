"""Multi-view recovery of 3D keypoints from 2D annotations.

Each annotated pixel defines a ray from its camera center; the 3D position is
the least-squares closest point to the bundle of rays,

    Q = (sum_l (I - v_l v_l^T))^-1  (sum_l (I - v_l v_l^T) T_l)

with T_l the camera centers and v_l the unit ray directions, all expressed in
the marker frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DegenerateRays, MissingCameraPose, NoTriangulableKeypoints
from .geometry import (
    CameraIntrinsics,
    Ray,
    RigidTransform,
    as_pixel,
    pixel_direction,
)

_CONDITION_LIMIT = 1e8


@dataclass
class AnnotationSet:
    """Manually clicked keypoints for one frame."""

    frame_id: str
    points: list[tuple[str, np.ndarray]]
    annotator: str = ""

    def __post_init__(self) -> None:
        self.points = [(kid, as_pixel(px)) for kid, px in self.points]
        ids = [kid for kid, _ in self.points]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate keypoint ids in frame {self.frame_id!r}")


@dataclass
class Keypoint3D:
    """A triangulated keypoint in the marker frame."""

    keypoint_id: str
    position: np.ndarray
    residual_rms: float
    n_rays: int


@dataclass
class TriangulationResult:
    keypoints: list[Keypoint3D]
    skipped: dict[str, str] = field(default_factory=dict)


def pixel_ray(
    camera_pose_in_marker: RigidTransform,
    intr: CameraIntrinsics,
    pixel,
) -> Ray:
    """Marker-frame ray from the camera center through an image pixel."""
    direction_cam = pixel_direction(intr, pixel)
    direction = camera_pose_in_marker.rotation.rotate(direction_cam)
    return Ray(camera_pose_in_marker.translation, direction)


def triangulate_point(rays: Sequence[Ray]) -> tuple[np.ndarray, float]:
    """Least-squares closest point to two or more rays.

    Returns (point, residual_rms) where the residual is the RMS perpendicular
    distance from the point to each ray, in meters.
    """
    if len(rays) < 2:
        raise ValueError(f"need at least 2 rays, got {len(rays)}")
    a = np.zeros((3, 3))
    b = np.zeros(3)
    for ray in rays:
        proj = np.eye(3) - np.outer(ray.direction, ray.direction)
        a += proj
        b += proj @ ray.origin
    if np.linalg.cond(a) > _CONDITION_LIMIT:
        raise DegenerateRays(
            f"ray bundle is near-parallel (cond(A) > {_CONDITION_LIMIT:.0e})"
        )
    q = np.linalg.solve(a, b)

    sq_dists = []
    for ray in rays:
        offset = q - ray.origin
        perp = offset - np.dot(offset, ray.direction) * ray.direction
        sq_dists.append(float(np.dot(perp, perp)))
    return q, float(np.sqrt(np.mean(sq_dists)))


def triangulate_keypoints(
    annotations: Iterable[AnnotationSet],
    camera_poses: Mapping[str, RigidTransform],
    intr: CameraIntrinsics,
) -> TriangulationResult:
    """Triangulate every keypoint id observed in at least two frames.

    Keypoints seen only once are reported in `skipped`, not failed; a frame
    id without a camera pose is an error.
    """
    observations: dict[str, list[Ray]] = {}
    for ann in annotations:
        if ann.frame_id not in camera_poses:
            raise MissingCameraPose(f"no camera pose for frame {ann.frame_id!r}")
        pose = camera_poses[ann.frame_id]
        for kid, px in ann.points:
            observations.setdefault(kid, []).append(pixel_ray(pose, intr, px))

    result = TriangulationResult(keypoints=[])
    for kid, rays in observations.items():
        if len(rays) < 2:
            result.skipped[kid] = f"seen in {len(rays)} frame, need >= 2"
            continue
        try:
            position, residual = triangulate_point(rays)
        except DegenerateRays as exc:
            result.skipped[kid] = str(exc)
            continue
        result.keypoints.append(Keypoint3D(kid, position, residual, len(rays)))

    if not result.keypoints:
        raise NoTriangulableKeypoints(
            "no keypoint has two or more usable observations"
        )
    return result
