"""Object pose recovery and label propagation across a session.

Once the object pose in the marker frame is fixed, every frame with a known
camera pose receives 2D labels for all model keypoints (occluded ones
included, with a z-buffer visibility flag), plus a bounding box from the
projected mesh vertices and a convex-hull foreground mask.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..alignment import Correspondences3D, horn_align
from ..errors import (
    BehindCamera,
    DegenerateConfiguration,
    MissingCameraPose,
    MissingObjectPose,
)
from ..geometry import CameraIntrinsics, RigidTransform, project_points
from ..manifest import BBox, FrameLabels, FrameRecord, KeypointLabel, Session
from ..model import ObjectModel
from ..triangulation import Keypoint3D

VISIBILITY_DEPTH_TOL = 0.005  # meters added to the buffer depth


def object_pose_in_marker(
    triangulated: Sequence[Keypoint3D],
    model: ObjectModel,
) -> tuple[RigidTransform, float]:
    """Rigid alignment of model keypoints onto their triangulated positions."""
    kp_map = model.keypoint_map()
    pairs = [(kp_map[k.keypoint_id], k.position) for k in triangulated if k.keypoint_id in kp_map]
    if len(pairs) < 3:
        raise DegenerateConfiguration(
            f"only {len(pairs)} triangulated keypoints match the model, need >= 3"
        )
    src = np.array([s for s, _ in pairs])
    dst = np.array([d for _, d in pairs])
    pose, rmsd = horn_align(Correspondences3D(src, dst))
    return RigidTransform(pose.rotation, pose.translation, "object", "marker"), rmsd


def bbox_from_model(
    pose_obj_in_cam: RigidTransform,
    model: ObjectModel,
    intr: CameraIntrinsics,
) -> BBox:
    """Tight box around all projected mesh vertices, clamped to the image."""
    cam = pose_obj_in_cam.apply(model.mesh_vertices)
    if np.any(cam[:, 2] <= 0):
        n_bad = int(np.count_nonzero(cam[:, 2] <= 0))
        raise BehindCamera(f"{n_bad} mesh vertices project behind the camera")
    px = project_points(intr, cam)
    x_min, y_min = px.min(axis=0)
    x_max, y_max = px.max(axis=0)
    cx_min = min(max(x_min, 0.0), float(intr.width))
    cy_min = min(max(y_min, 0.0), float(intr.height))
    cx_max = min(max(x_max, 0.0), float(intr.width))
    cy_max = min(max(y_max, 0.0), float(intr.height))
    clamped = (cx_min, cy_min, cx_max, cy_max) != (x_min, y_min, x_max, y_max)
    return BBox(cx_min, cy_min, cx_max, cy_max, clamped)


def rasterize_depth(
    vertices_cam: np.ndarray,
    faces: np.ndarray,
    intr: CameraIntrinsics,
) -> np.ndarray:
    """Nearest-depth buffer of the mesh at image resolution (inf = empty).

    Faces with any vertex at or behind the camera are skipped rather than
    clipped; callers mark such frames invalid anyway.
    """
    buf = np.full((intr.height, intr.width), np.inf)
    z_all = vertices_cam[:, 2]
    px_all = np.full((len(vertices_cam), 2), np.nan)
    front = z_all > 1e-9
    if front.any():
        px_all[front] = project_points(intr, vertices_cam[front])

    for face in faces:
        if not front[face].all():
            continue
        tri = px_all[face]
        z_inv = 1.0 / z_all[face]
        x_lo = max(int(np.floor(tri[:, 0].min())), 0)
        x_hi = min(int(np.ceil(tri[:, 0].max())), intr.width - 1)
        y_lo = max(int(np.floor(tri[:, 1].min())), 0)
        y_hi = min(int(np.ceil(tri[:, 1].max())), intr.height - 1)
        if x_lo > x_hi or y_lo > y_hi:
            continue
        xs = np.arange(x_lo, x_hi + 1)
        ys = np.arange(y_lo, y_hi + 1)
        gx, gy = np.meshgrid(xs, ys)

        (x0, y0), (x1, y1), (x2, y2) = tri
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        if abs(area) < 1e-12:
            continue
        w0 = ((x1 - gx) * (y2 - gy) - (x2 - gx) * (y1 - gy)) / area
        w1 = ((x2 - gx) * (y0 - gy) - (x0 - gx) * (y2 - gy)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        if not inside.any():
            continue
        # perspective-correct: 1/z interpolates linearly in screen space
        inv_z = w0 * z_inv[0] + w1 * z_inv[1] + w2 * z_inv[2]
        depth = np.where(inside & (inv_z > 0), 1.0 / np.maximum(inv_z, 1e-300), np.inf)
        region = buf[y_lo : y_hi + 1, x_lo : x_hi + 1]
        np.minimum(region, depth, out=region)
    return buf


def keypoint_visibility(
    kp_cam: np.ndarray,
    pixels: np.ndarray,
    depth_buffer: np.ndarray,
    tol: float = VISIBILITY_DEPTH_TOL,
) -> np.ndarray:
    """Visible iff the keypoint is no deeper than the rendered surface + tol."""
    height, width = depth_buffer.shape
    visible = np.zeros(len(kp_cam), dtype=bool)
    for i, ((u, v), p) in enumerate(zip(pixels, kp_cam)):
        col = int(round(u))
        row = int(round(v))
        if not (0 <= col < width and 0 <= row < height):
            continue
        visible[i] = p[2] <= depth_buffer[row, col] + tol
    return visible


def propagate_labels(
    session: Session,
    intr: CameraIntrinsics,
    model: ObjectModel,
    visibility_tol: float = VISIBILITY_DEPTH_TOL,
) -> list[FrameRecord]:
    """Label every frame of a session from the solved object pose.

    All model keypoints are labeled regardless of visibility; each carries a
    z-buffer visibility flag. A frame where any keypoint or mesh vertex falls
    behind the camera is marked invalid instead of being dropped.
    """
    if session.object_pose_in_marker is None:
        raise MissingObjectPose(f"session {session.session_id!r} has no solved object pose")
    kp_ids = model.keypoint_ids
    kp_obj = model.keypoint_array()

    for fr in session.frames:
        if fr.camera_pose_in_marker is None:
            raise MissingCameraPose(f"frame {fr.frame_id!r} has no camera pose")
        obj_in_cam = fr.camera_pose_in_marker.invert().compose(session.object_pose_in_marker)
        kp_cam = obj_in_cam.apply(kp_obj)
        if np.any(kp_cam[:, 2] <= 0):
            fr.valid = False
            fr.labels = None
            continue
        try:
            bbox = bbox_from_model(obj_in_cam, model, intr)
        except BehindCamera:
            fr.valid = False
            fr.labels = None
            continue
        pixels = project_points(intr, kp_cam)
        buf = rasterize_depth(obj_in_cam.apply(model.mesh_vertices), model.mesh_faces, intr)
        visible = keypoint_visibility(kp_cam, pixels, buf, visibility_tol)
        fr.labels = FrameLabels(
            [
                KeypointLabel(kid, float(px[0]), float(px[1]), bool(vis))
                for kid, px, vis in zip(kp_ids, pixels, visible)
            ],
            bbox,
        )
        fr.valid = True
    return session.frames


def convex_hull_2d(points: np.ndarray) -> np.ndarray:
    """Monotone-chain convex hull, counter-clockwise, no repeated endpoint."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[np.ndarray] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[np.ndarray] = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1])


def hull_mask(hull: np.ndarray, width: int, height: int) -> np.ndarray:
    """Boolean (height, width) mask of pixel centers inside a convex hull."""
    mask = np.zeros((height, width), dtype=bool)
    if len(hull) == 0:
        return mask
    if len(hull) <= 2:
        for u, v in np.atleast_2d(hull):
            col, row = int(round(u)), int(round(v))
            if 0 <= col < width and 0 <= row < height:
                mask[row, col] = True
        return mask
    x_lo = max(int(np.floor(hull[:, 0].min())), 0)
    x_hi = min(int(np.ceil(hull[:, 0].max())), width - 1)
    y_lo = max(int(np.floor(hull[:, 1].min())), 0)
    y_hi = min(int(np.ceil(hull[:, 1].max())), height - 1)
    if x_lo > x_hi or y_lo > y_hi:
        return mask
    xs = np.arange(x_lo, x_hi + 1)
    ys = np.arange(y_lo, y_hi + 1)
    gx, gy = np.meshgrid(xs, ys)
    inside = np.ones(gx.shape, dtype=bool)
    n = len(hull)
    for i in range(n):
        px, py = hull[i]
        qx, qy = hull[(i + 1) % n]
        inside &= (qx - px) * (gy - py) - (qy - py) * (gx - px) >= -1e-9
    mask[y_lo : y_hi + 1, x_lo : x_hi + 1] = inside
    return mask


@dataclass
class ForegroundPatch:
    """Segmented object pixels plus where they came from in the frame."""

    mask: np.ndarray  # (H, W) bool, full image
    rgba: np.ndarray  # (h, w, 4) uint8 crop
    origin: tuple[int, int]  # (x0, y0) of the crop in the frame
    hull: np.ndarray  # (M, 2) hull in frame pixel coordinates


def segment_foreground(
    image: np.ndarray,
    pose_obj_in_cam: RigidTransform,
    model: ObjectModel,
    intr: CameraIntrinsics,
) -> ForegroundPatch:
    """Crop the image inside the convex hull of the projected mesh vertices."""
    cam = pose_obj_in_cam.apply(model.mesh_vertices)
    if np.any(cam[:, 2] <= 0):
        raise BehindCamera("mesh vertices project behind the camera")
    projected = project_points(intr, cam)
    hull = convex_hull_2d(projected)
    if len(hull) <= 2:
        warnings.warn("projected model is degenerate; foreground collapses to a point")
    height, width = image.shape[:2]
    mask = hull_mask(hull, width, height)
    if not mask.any():
        # keep a 1-pixel patch at the nearest in-bounds projection
        u = int(np.clip(round(projected[:, 0].mean()), 0, width - 1))
        v = int(np.clip(round(projected[:, 1].mean()), 0, height - 1))
        mask[v, u] = True

    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1])
    x0, x1 = int(cols[0]), int(cols[-1])
    crop = image[y0 : y1 + 1, x0 : x1 + 1]
    if crop.ndim == 2:
        crop = np.repeat(crop[:, :, None], 3, axis=2)
    rgba = np.zeros((crop.shape[0], crop.shape[1], 4), dtype=np.uint8)
    rgba[:, :, :3] = crop[:, :, :3]
    rgba[:, :, 3] = np.where(mask[y0 : y1 + 1, x0 : x1 + 1], 255, 0)
    return ForegroundPatch(mask, rgba, (x0, y0), hull)
