"""Materialize synthetic scenes as on-disk project inputs.

Produces everything the CLI pipeline ingests: mesh + keypoint + intrinsics
files, rendered frame PNGs, per-frame checkerboard corner files, scripted
annotations for the first few frames, and a ground-truth record for
closure checks.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .geometry import project_points
from .imgio import save_png
from .labelgen.propagate import convex_hull_2d, hull_mask
from .manifest import BoardSpec, pose_to_dict, save_keypoints
from .meshio import save_obj
from .synthetic import SyntheticScene

DEFAULT_BOARD = BoardSpec(rows=7, cols=5, square_size=0.03)


def render_frame_image(scene: SyntheticScene, frame, board: BoardSpec) -> np.ndarray:
    """Flat synthetic render: object silhouette and board corners on gray."""
    intr = scene.intrinsics
    image = np.full((intr.height, intr.width, 3), 96, dtype=np.uint8)

    obj_in_cam = frame.object_pose_in_camera(scene.object_pose_in_marker)
    verts_cam = obj_in_cam.apply(scene.model.mesh_vertices)
    if np.all(verts_cam[:, 2] > 0):
        hull = convex_hull_2d(project_points(intr, verts_cam))
        if len(hull) >= 3:
            mask = hull_mask(hull, intr.width, intr.height)
            image[mask] = (200, 190, 160)

    corners = board_corner_pixels(scene, frame, board)
    if corners is not None:
        for u, v in corners:
            col, row = int(round(u)), int(round(v))
            image[max(row - 1, 0) : row + 2, max(col - 1, 0) : col + 2] = (255, 255, 255)

    for kid, px in frame.keypoints_true.items():
        col, row = int(round(px[0])), int(round(px[1]))
        if 0 <= col < intr.width and 0 <= row < intr.height:
            image[row, col] = (220, 40, 40)
    return image


def board_corner_pixels(scene: SyntheticScene, frame, board: BoardSpec):
    """Projected inner corners, or None when any corner leaves the image."""
    intr = scene.intrinsics
    grid = board.corner_grid()
    pts = np.column_stack([grid, np.zeros(len(grid))])
    cam = frame.camera_pose_in_marker.invert().apply(pts)
    if np.any(cam[:, 2] <= 0):
        return None
    px = project_points(intr, cam)
    inside = (
        (px[:, 0] >= 0)
        & (px[:, 0] <= intr.width - 1)
        & (px[:, 1] >= 0)
        & (px[:, 1] <= intr.height - 1)
    )
    return px if inside.all() else None


def build_project_fixture(
    scene: SyntheticScene,
    out_dir,
    board: BoardSpec = DEFAULT_BOARD,
    annotate_frames: int = 5,
    annotate_keypoints: int = 6,
    annotation_noise_px: float = 0.0,
    render: bool = True,
) -> Path:
    """Write raw pipeline inputs for a scene; returns the fixture directory."""
    out = Path(out_dir)
    frames_dir = out / "frames"
    corners_dir = out / "corners"
    frames_dir.mkdir(parents=True, exist_ok=True)
    corners_dir.mkdir(parents=True, exist_ok=True)

    save_obj(out / "mesh.obj", scene.model.mesh_vertices, scene.model.mesh_faces)
    save_keypoints(out / "keypoints.json", scene.model.keypoints)
    intr = scene.intrinsics
    (out / "intrinsics.json").write_text(
        json.dumps(
            {
                "fx": intr.fx,
                "fy": intr.fy,
                "px": intr.px,
                "py": intr.py,
                "width": intr.width,
                "height": intr.height,
            },
            indent=2,
        )
        + "\n"
    )

    missing_corners = []
    for frame in scene.frames:
        if render:
            save_png(frames_dir / f"{frame.frame_id}.png", render_frame_image(scene, frame, board))
        corners = board_corner_pixels(scene, frame, board)
        if corners is None:
            missing_corners.append(frame.frame_id)
            continue
        lines = [f"{float(u)!r} {float(v)!r}" for u, v in corners]
        (corners_dir / f"{frame.frame_id}.txt").write_text("\n".join(lines) + "\n")
    if missing_corners:
        raise ValidationError(
            f"board corners leave the image in frames {missing_corners[:5]}; "
            "adjust the scene geometry"
        )

    annotations = _scripted_annotations(
        scene, annotate_frames, annotate_keypoints, annotation_noise_px
    )
    (out / "annotations.json").write_text(json.dumps(annotations, indent=2, sort_keys=True) + "\n")

    truth = {
        "object_pose_in_marker": pose_to_dict(scene.object_pose_in_marker),
        "frames": {
            fr.frame_id: {
                "camera_pose_in_marker": pose_to_dict(fr.camera_pose_in_marker),
                "keypoints_true": {
                    k: [float(a) for a in v] for k, v in fr.keypoints_true.items()
                },
            }
            for fr in scene.frames
        },
    }
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return out


def _scripted_annotations(
    scene: SyntheticScene,
    n_frames: int,
    n_keypoints: int,
    noise_px: float,
) -> dict:
    """Pick spread-out frames sharing enough visible keypoints to annotate."""
    if n_frames > len(scene.frames):
        raise ValidationError(
            f"cannot annotate {n_frames} frames, scene has {len(scene.frames)}"
        )
    step = max(1, len(scene.frames) // n_frames)
    chosen = [scene.frames[i * step] for i in range(n_frames)]
    intr = scene.intrinsics

    def in_image(px):
        return 0 <= px[0] <= intr.width - 1 and 0 <= px[1] <= intr.height - 1

    common = None
    for fr in chosen:
        visible = {k for k, px in fr.keypoints_noisy.items() if in_image(px)}
        common = visible if common is None else (common & visible)
    if common is None or len(common) < n_keypoints:
        raise ValidationError(
            f"only {0 if common is None else len(common)} keypoints visible in all "
            f"{n_frames} annotation frames, need {n_keypoints}"
        )
    picked = sorted(common)[:n_keypoints]

    rng = np.random.default_rng(np.random.SeedSequence((scene.config.seed, 0xA220)))
    doc = {}
    for fr in chosen:
        entries = []
        for kid in picked:
            px = np.asarray(fr.keypoints_noisy[kid], dtype=float)
            if noise_px > 0:
                px = px + rng.normal(0.0, noise_px, 2)
            entries.append({"keypoint_id": kid, "u": float(px[0]), "v": float(px[1])})
        doc[fr.frame_id] = entries
    return doc
