"""Camera pose in the marker frame from checkerboard inner corners.

Corner detection is external; this module takes the full row-major list of
inner-corner pixels, fits a plane-to-image homography (normalized DLT),
decomposes it against the intrinsics, and polishes the pose with a damped
Gauss-Newton on reprojection error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateHomography
from ..geometry import CameraIntrinsics, RigidTransform, UnitQuat
from ..manifest import BoardSpec

HIGH_RESIDUAL_PX = 1.0
_COLLINEAR_RATIO = 1e-9


@dataclass
class BoardPoseResult:
    pose_camera_in_marker: RigidTransform
    mean_reprojection_px: float
    high_residual: bool


def _normalization(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin, mean distance sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(pts - centroid, axis=1)))
    if mean_dist <= 0:
        raise DegenerateHomography("all points coincide")
    s = math.sqrt(2.0) / mean_dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def homography_dlt(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Plane-to-image homography by the normalized direct linear transform."""
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    dst = np.asarray(dst, dtype=float).reshape(-1, 2)
    if len(src) < 4:
        raise DegenerateHomography(f"need >= 4 correspondences, got {len(src)}")
    for pts, which in ((src, "plane"), (dst, "pixel")):
        sv = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if sv[1] < _COLLINEAR_RATIO * max(sv[0], 1e-300):
            raise DegenerateHomography(f"{which} points are collinear")

    t_src = _normalization(src)
    t_dst = _normalization(dst)
    sh = (t_src @ np.column_stack([src, np.ones(len(src))]).T).T
    dh = (t_dst @ np.column_stack([dst, np.ones(len(dst))]).T).T

    rows = []
    for (x, y, _), (u, v, _) in zip(sh, dh):
        rows.append([-x, -y, -1, 0, 0, 0, u * x, u * y, u])
        rows.append([0, 0, 0, -x, -y, -1, v * x, v * y, v])
    _, _, vt = np.linalg.svd(np.array(rows))
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    if abs(h[2, 2]) < 1e-15:
        raise DegenerateHomography("homography is not normalizable")
    return h / h[2, 2]


def _decompose_homography(h: np.ndarray, intr: CameraIntrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Initial (R, t) of the board plane in the camera frame."""
    k_inv = np.linalg.inv(intr.matrix())
    a = k_inv @ h
    n1 = np.linalg.norm(a[:, 0])
    n2 = np.linalg.norm(a[:, 1])
    lam = 2.0 / (n1 + n2)
    r1 = a[:, 0] * lam
    r2 = a[:, 1] * lam
    t = a[:, 2] * lam
    if t[2] < 0:  # board must be in front of the camera
        r1, r2, t = -r1, -r2, -t
    r3 = np.cross(r1, r2)
    rot0 = np.column_stack([r1, r2, r3])
    u, _, vt = np.linalg.svd(rot0)
    rot = u @ np.diag([1.0, 1.0, float(np.linalg.det(u @ vt))]) @ vt
    return rot, t


def _reprojection(rot, t, board_pts, intr):
    cam = board_pts @ rot.T + t
    z = cam[:, 2]
    u = intr.px + intr.fx * cam[:, 0] / z
    v = intr.py + intr.fy * cam[:, 1] / z
    return np.column_stack([u, v])


def _refine_pose(rot, t, board_pts, pixels, intr, iters=25):
    """Damped Gauss-Newton on reprojection over a 6-dof local update."""

    def residuals(r, tt):
        return (_reprojection(r, tt, board_pts, intr) - pixels).reshape(-1)

    def apply_step(r, tt, delta):
        omega = delta[:3]
        angle = np.linalg.norm(omega)
        if angle > 1e-12:
            q = UnitQuat.from_axis_angle(omega, angle)
            r = q.to_matrix() @ r
        return r, tt + delta[3:]

    res = residuals(rot, t)
    cost = float(res @ res)
    h = 1e-7
    for _ in range(iters):
        jac = np.empty((len(res), 6))
        for k in range(6):
            d = np.zeros(6)
            d[k] = h
            rp, tp = apply_step(rot, t, d)
            rm, tm = apply_step(rot, t, -d)
            jac[:, k] = (residuals(rp, tp) - residuals(rm, tm)) / (2 * h)
        step, *_ = np.linalg.lstsq(jac, -res, rcond=None)
        improved = False
        for _ in range(8):  # backtrack on a worsening step
            r_new, t_new = apply_step(rot, t, step)
            res_new = residuals(r_new, t_new)
            cost_new = float(res_new @ res_new)
            if cost_new < cost:
                rot, t, res, cost = r_new, t_new, res_new, cost_new
                improved = True
                break
            step = step * 0.5
        if not improved or np.linalg.norm(step) < 1e-14:
            break
    return rot, t


def camera_pose_from_board(
    corners_px,
    board: BoardSpec,
    intr: CameraIntrinsics,
) -> BoardPoseResult:
    """Pose of the camera in the marker frame from all inner corners.

    `corners_px` must list every inner corner in row-major board order. The
    marker frame has x along columns, y along rows, z out of the board; the
    returned transform maps camera-frame points into that frame.
    """
    pixels = np.asarray(corners_px, dtype=float).reshape(-1, 2)
    grid = board.corner_grid()
    if len(pixels) != len(grid):
        raise DegenerateHomography(
            f"expected {len(grid)} corners for a {board.rows}x{board.cols} board, "
            f"got {len(pixels)}"
        )
    h = homography_dlt(grid, pixels)
    rot, t = _decompose_homography(h, intr)
    board_pts = np.column_stack([grid, np.zeros(len(grid))])
    rot, t = _refine_pose(rot, t, board_pts, pixels, intr)

    residual = _reprojection(rot, t, board_pts, intr) - pixels
    mean_px = float(np.mean(np.linalg.norm(residual, axis=1)))

    marker_from_cam = RigidTransform(
        UnitQuat.from_matrix(rot), t, "marker", "camera"
    ).invert()
    return BoardPoseResult(marker_from_cam, mean_px, mean_px > HIGH_RESIDUAL_PX)
