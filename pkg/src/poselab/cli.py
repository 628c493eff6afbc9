"""Command-line pipeline: project setup, triangulation, labeling, export,
pose estimation, synthetic fixtures, and the annotation service.

Failures exit non-zero with a machine-readable JSON error on stderr:
0 ok, 1 usage, 2 validation, 3 geometric failure, 4 I/O.
"""

from __future__ import annotations

import functools
import json
import shutil
import sys
from pathlib import Path

import click
import numpy as np

from .errors import GeometricError, PoseLabError, ValidationError
from .imgio import load_rgb
from .labelgen import (
    camera_pose_from_board,
    domain_randomize,
    export_dataset,
    object_pose_in_marker,
    propagate_labels,
    segment_foreground,
    write_dr_outputs,
)
from .labelgen.randomize import LabeledPatch
from .manifest import (
    BoardSpec,
    DRConfig,
    FrameAnnotations,
    FrameRecord,
    KeypointLabel,
    ProjectManifest,
    ProjectStore,
    Session,
    load_intrinsics,
    pose_from_dict,
    pose_to_dict,
)
from .meshio import load_ply_points
from .model import PointCloud
from .pose import IcpConfig, RansacConfig, estimate_pose
from .synthetic import (
    SceneConfig,
    dump_scene,
    evaluate,
    generate_scene,
    make_box_model,
)
from .triangulation import AnnotationSet, triangulate_keypoints

# spec'd exit codes: usage errors are 1
click.UsageError.exit_code = 1

EXIT_VALIDATION = 2
EXIT_GEOMETRIC = 3
EXIT_IO = 4


def _fail(code: int, error: Exception) -> None:
    payload = {"error": type(error).__name__, "message": str(error)}
    print(json.dumps(payload), file=sys.stderr)
    sys.exit(code)


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _fail(EXIT_VALIDATION, exc)
        except GeometricError as exc:
            _fail(EXIT_GEOMETRIC, exc)
        except PoseLabError as exc:
            _fail(EXIT_VALIDATION, exc)
        except ValueError as exc:  # bad user-supplied numbers/configs
            _fail(EXIT_VALIDATION, exc)
        except OSError as exc:
            _fail(EXIT_IO, exc)

    return wrapper


def _parse_board(text: str) -> BoardSpec:
    try:
        grid, size = text.split(":")
        rows, cols = grid.lower().split("x")
        return BoardSpec(int(rows), int(cols), float(size))
    except (ValueError, PoseLabError) as exc:
        raise ValidationError(f"bad board spec {text!r}, expected RxC:size") from exc


def _store(project: str) -> ProjectStore:
    store = ProjectStore(project)
    if not store.manifest_path.exists():
        raise ValidationError(f"no project manifest under {project!r}")
    store.load()
    return store


project_option = click.option(
    "--project", "-p", default=".", show_default=True, help="Project directory."
)


@click.group()
def main() -> None:
    """Pose-labeling toolkit: triangulate clicks, label frames, estimate poses."""


@main.command()
@click.argument("project_dir")
@click.option("--model", "mesh_file", required=True, help="Object mesh (.obj or .ply).")
@click.option("--keypoints", "keypoints_file", required=True, help="Named 3D keypoints JSON.")
@click.option("--intrinsics", "intrinsics_file", required=True, help="Pinhole intrinsics JSON.")
@click.option("--board", "board_text", required=True, help="Checkerboard spec RxC:size_m.")
@cli_errors
def init(project_dir, mesh_file, keypoints_file, intrinsics_file, board_text):
    """Create a project directory with its manifest."""
    board = _parse_board(board_text)
    intr = load_intrinsics(intrinsics_file)
    root = Path(project_dir)
    model_dir = root / "model"
    model_dir.mkdir(parents=True, exist_ok=True)
    mesh_dst = model_dir / Path(mesh_file).name
    kp_dst = model_dir / Path(keypoints_file).name
    shutil.copyfile(mesh_file, mesh_dst)
    shutil.copyfile(keypoints_file, kp_dst)
    manifest = ProjectManifest(
        project_id=root.name,
        intrinsics=intr,
        board=board,
        mesh_path=str(mesh_dst.relative_to(root)),
        keypoints_path=str(kp_dst.relative_to(root)),
    )
    store = ProjectStore.create(root, manifest)
    store.object_model()  # validate model files now, not on first use
    click.echo(f"initialized project {manifest.project_id!r} at {root}")


@main.command("import-frames")
@click.argument("session_id")
@click.argument("image_dir")
@click.option("--corners", "corners_dir", default=None, help="Directory of <frame>.txt corner files.")
@project_option
@cli_errors
def import_frames(session_id, image_dir, corners_dir, project):
    """Register frames; compute camera poses where corner files exist."""
    store = _store(project)
    manifest = store.manifest
    images = sorted(
        p for p in Path(image_dir).iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not images:
        raise ValidationError(f"no images found in {image_dir!r}")

    try:
        session = manifest.session(session_id)
    except KeyError:
        session = Session(session_id)
        manifest.sessions.append(session)

    existing = {fr.frame_id for fr in session.frames}
    n_posed = 0
    for img in images:
        frame_id = img.stem
        if frame_id in existing:
            continue
        record = FrameRecord(frame_id, str(img.resolve()))
        if corners_dir is not None:
            corner_file = Path(corners_dir) / f"{frame_id}.txt"
            if corner_file.exists():
                corners = _read_corners(corner_file)
                result = camera_pose_from_board(corners, manifest.board, manifest.intrinsics)
                record.camera_pose_in_marker = result.pose_camera_in_marker
                record.board_reprojection_px = result.mean_reprojection_px
                n_posed += 1
        session.frames.append(record)
    store.save(manifest)
    click.echo(f"session {session_id!r}: {len(session.frames)} frames, {n_posed} new camera poses")


def _read_corners(path: Path) -> np.ndarray:
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        u, v = line.split()
        rows.append((float(u), float(v)))
    return np.array(rows)


@main.command()
@click.option("--file", "annotations_file", required=True, help="JSON {frame_id: [{keypoint_id,u,v}]}.")
@project_option
@cli_errors
def annotate(annotations_file, project):
    """Load scripted annotations into the manifest (UI does this over HTTP)."""
    store = _store(project)
    manifest = store.manifest
    model_ids = set(store.object_model().keypoint_ids)
    doc = json.loads(Path(annotations_file).read_text())
    for frame_id, entries in doc.items():
        _, frame = manifest.find_frame(frame_id)
        points = []
        for e in entries:
            if e["keypoint_id"] not in model_ids:
                raise ValidationError(
                    f"{frame_id}: unknown keypoint id {e['keypoint_id']!r}"
                )
            points.append((e["keypoint_id"], (float(e["u"]), float(e["v"]))))
        revision = frame.annotations.revision + 1 if frame.annotations else 0
        frame.annotations = FrameAnnotations(points, "scripted", revision)
    store.save(manifest)
    click.echo(f"annotated {len(doc)} frames")


def _session_annotation_sets(session: Session):
    sets = []
    poses = {}
    for fr in session.frames:
        if fr.annotations:
            sets.append(
                AnnotationSet(
                    fr.frame_id,
                    [(kid, np.array(uv)) for kid, uv in fr.annotations.points],
                    fr.annotations.annotator,
                )
            )
            if fr.camera_pose_in_marker is not None:
                poses[fr.frame_id] = fr.camera_pose_in_marker
    return sets, poses


@main.command()
@click.argument("session_id")
@project_option
@cli_errors
def triangulate(session_id, project):
    """Triangulate annotated keypoints; print per-keypoint residuals."""
    store = _store(project)
    session = store.manifest.session(session_id)
    sets, poses = _session_annotation_sets(session)
    if not sets:
        raise ValidationError(f"session {session_id!r} has no annotations")
    result = triangulate_keypoints(sets, poses, store.manifest.intrinsics)
    for kp in sorted(result.keypoints, key=lambda k: k.keypoint_id):
        click.echo(
            f"{kp.keypoint_id}: position=({kp.position[0]:.6f}, {kp.position[1]:.6f}, "
            f"{kp.position[2]:.6f}) m, residual_rms={kp.residual_rms * 1000:.3f} mm, "
            f"rays={kp.n_rays}"
        )
    for kid, reason in sorted(result.skipped.items()):
        click.echo(f"{kid}: skipped ({reason})")


@main.command("solve-object")
@click.argument("session_id")
@project_option
@cli_errors
def solve_object(session_id, project):
    """Recover the object pose in the marker frame; print alignment rmsd."""
    store = _store(project)
    manifest = store.manifest
    session = manifest.session(session_id)
    sets, poses = _session_annotation_sets(session)
    if not sets:
        raise ValidationError(f"session {session_id!r} has no annotations")
    result = triangulate_keypoints(sets, poses, manifest.intrinsics)
    pose, rmsd = object_pose_in_marker(result.keypoints, store.object_model())
    session.object_pose_in_marker = pose
    session.solve_rmsd = rmsd
    store.save(manifest)
    click.echo(f"object pose solved from {len(result.keypoints)} keypoints, rmsd={rmsd * 1000:.3f} mm")


@main.command()
@click.argument("session_id")
@project_option
@cli_errors
def label(session_id, project):
    """Propagate keypoint labels and bounding boxes to every frame."""
    store = _store(project)
    manifest = store.manifest
    session = manifest.session(session_id)
    propagate_labels(session, manifest.intrinsics, store.object_model())
    store.save(manifest)
    n_valid = sum(1 for fr in session.frames if fr.valid and fr.labels)
    click.echo(f"labeled {n_valid}/{len(session.frames)} frames in session {session_id!r}")


@main.command()
@click.option("--config", "config_file", default=None, help="DR config JSON (overrides manifest).")
@click.option("--workers", default=1, show_default=True)
@project_option
@cli_errors
def randomize(config_file, workers, project):
    """Composite domain-randomized samples from labeled frames."""
    store = _store(project)
    manifest = store.manifest
    cfg = manifest.dr or DRConfig()
    if config_file:
        doc = json.loads(Path(config_file).read_text())
        cfg = DRConfig(
            n_samples=doc.get("n_samples", cfg.n_samples),
            rotation_deg=tuple(doc.get("rotation_deg", cfg.rotation_deg)),
            scale=tuple(doc.get("scale", cfg.scale)),
            brightness=tuple(doc.get("brightness", cfg.brightness)),
            saturation=tuple(doc.get("saturation", cfg.saturation)),
            background_dir=doc.get("background_dir", cfg.background_dir),
            real_dr_ratio=doc.get("real_dr_ratio", cfg.real_dr_ratio),
            seed=doc.get("seed", cfg.seed),
        )
        manifest.dr = cfg
    if not cfg.background_dir:
        raise ValidationError("no background_dir configured for domain randomization")

    model = store.object_model()
    patches = collect_patches(store, model)
    backgrounds = load_backgrounds(store.resolve(cfg.background_dir))
    samples = domain_randomize(patches, backgrounds, cfg, workers=workers)
    write_dr_outputs(store.root, samples, cfg.seed)
    store.save(manifest)
    click.echo(f"wrote {len(samples)} domain-randomized samples to {store.root / 'dr'}")


def collect_patches(store: ProjectStore, model) -> list[LabeledPatch]:
    manifest = store.manifest
    patches = []
    for session in manifest.sessions:
        if session.object_pose_in_marker is None:
            continue
        for fr in session.frames:
            if not (fr.valid and fr.labels and fr.camera_pose_in_marker):
                continue
            image = load_rgb(store.resolve(fr.image_path))
            obj_in_cam = fr.camera_pose_in_marker.invert().compose(session.object_pose_in_marker)
            fg = segment_foreground(image, obj_in_cam, model, manifest.intrinsics)
            x0, y0 = fg.origin
            patches.append(
                LabeledPatch(
                    rgba=fg.rgba,
                    keypoints=[
                        KeypointLabel(k.keypoint_id, k.u - x0, k.v - y0, k.visible)
                        for k in fr.labels.keypoints
                    ],
                    hull=fg.hull - np.array([x0, y0], dtype=float),
                )
            )
    if not patches:
        raise ValidationError("no labeled frames available to build patches from")
    return patches


def load_backgrounds(directory: Path) -> list[np.ndarray]:
    directory = Path(directory)
    files = sorted(
        p for p in directory.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    if not files:
        raise ValidationError(f"no background images in {directory}")
    return [load_rgb(p) for p in files]


@main.command()
@click.option("--ratio", default=None, help="real:dr mixing ratio, e.g. 1:1.")
@click.option("--target", default=None, type=int, help="Total dataset size.")
@click.option("--seed", default=None, type=int)
@click.option("--out", "out_dir", required=True)
@project_option
@cli_errors
def export(ratio, target, seed, out_dir, project):
    """Export labeled images with normalized bbox/keypoint label files."""
    store = _store(project)
    result = export_dataset(
        store.manifest, store.root, out_dir, ratio=ratio, target=target, seed=seed
    )
    click.echo(
        f"exported {result.n_real} real + {result.n_dr} randomized samples to {result.out_dir}"
    )


@main.command()
@click.option("--image-keypoints", "keypoints_file", required=True, help="Detected 2D keypoints JSON.")
@click.option("--cloud", "cloud_file", default=None, help="Scene point cloud PLY (camera frame).")
@click.option("--branch", type=click.Choice(["pnp", "procrustes"]), default="pnp", show_default=True)
@click.option("--icp", "use_icp", is_flag=True, help="Refine against the cloud with ICP.")
@click.option("--seed", default=0, show_default=True, help="RANSAC seed.")
@project_option
@cli_errors
def estimate(keypoints_file, cloud_file, branch, use_icp, seed, project):
    """Estimate the object pose from detected 2D keypoints; JSON on stdout."""
    store = _store(project)
    doc = json.loads(Path(keypoints_file).read_text())
    kps = [(e["keypoint_id"], np.array([e["u"], e["v"]], dtype=float)) for e in doc]
    cloud = PointCloud(load_ply_points(cloud_file)) if cloud_file else None
    est = estimate_pose(
        kps,
        store.object_model(),
        store.manifest.intrinsics,
        branch=branch,
        cloud=cloud,
        use_icp=use_icp,
        ransac=RansacConfig(seed=seed),
        icp=IcpConfig(),
    )
    click.echo(
        json.dumps(
            {
                "schema_version": 1,
                "pose": pose_to_dict(est.pose),
                "method": est.method,
                "inlier_ids": est.inlier_ids,
                "residual": est.residual,
            },
            indent=2,
            sort_keys=True,
        )
    )


@main.group()
def synth() -> None:
    """Synthetic scenes and fixture projects."""


@synth.command("project")
@click.option("--out", "out_dir", required=True)
@click.option("--frames", default=12, show_default=True)
@click.option("--annotate-frames", default=5, show_default=True)
@click.option("--annotate-keypoints", default=6, show_default=True)
@click.option("--noise-px", default=0.0, show_default=True, help="Annotation pixel noise.")
@click.option("--seed", default=0, show_default=True)
@cli_errors
def synth_project(out_dir, frames, annotate_frames, annotate_keypoints, noise_px, seed):
    """Write a full fixture: images, corners, annotations, ground truth."""
    from .fixtures import DEFAULT_BOARD, build_project_fixture
    from .geometry import quat_from_rpy, RigidTransform

    model = make_box_model()
    object_pose = RigidTransform(
        quat_from_rpy(0.0, 0.0, 25.0), np.array([0.06, 0.09, 0.06]), "object", "marker"
    )
    scene = generate_scene(
        model,
        SceneConfig(n_views=frames, arc_deg=120.0, seed=seed),
        object_pose_in_marker=object_pose,
    )
    path = build_project_fixture(
        scene,
        out_dir,
        board=DEFAULT_BOARD,
        annotate_frames=annotate_frames,
        annotate_keypoints=annotate_keypoints,
        annotation_noise_px=noise_px,
    )
    click.echo(f"fixture written to {path}")


@synth.command("scene")
@click.option("--out", "out_dir", required=True)
@click.option("--views", default=5, show_default=True)
@click.option("--pixel-sigma", default=0.0, show_default=True)
@click.option("--cloud", "cloud_mode", type=click.Choice(["none", "keypoints", "surface", "both"]), default="none")
@click.option("--seed", default=0, show_default=True)
@cli_errors
def synth_scene(out_dir, views, pixel_sigma, cloud_mode, seed):
    """Dump a raw synthetic scene (JSON + per-frame PLY clouds)."""
    scene = generate_scene(
        make_box_model(),
        SceneConfig(
            n_views=views, pixel_sigma=pixel_sigma, cloud_mode=cloud_mode, seed=seed
        ),
    )
    dump_scene(scene, out_dir)
    click.echo(f"scene written to {out_dir}")


@main.command("eval")
@click.option("--estimate", "estimate_file", required=True, help="Pose JSON (or estimate output).")
@click.option("--truth", "truth_file", required=True, help="Pose JSON.")
@cli_errors
def eval_cmd(estimate_file, truth_file):
    """Position / RPY / geodesic error between two poses; JSON on stdout."""

    def read_pose(path):
        doc = json.loads(Path(path).read_text())
        return pose_from_dict(doc["pose"] if "pose" in doc else doc)

    err = evaluate(read_pose(estimate_file), read_pose(truth_file))
    click.echo(
        json.dumps(
            {
                "schema_version": 1,
                "position_error_m": err.position_error,
                "rpy_error_deg": list(err.rpy_error),
                "geodesic_deg": err.geodesic_deg,
            },
            indent=2,
            sort_keys=True,
        )
    )


@main.command()
@click.option("--port", default=8000, show_default=True, envvar="POSELAB_PORT")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--ui-dir", default=None, help="Serve the built annotator UI from this directory.")
@project_option
@cli_errors
def serve(port, host, ui_dir, project):
    """Run the annotation HTTP service for one project."""
    import uvicorn

    from .service import create_app

    store = _store(project)
    uvicorn.run(create_app(store, ui_dir=ui_dir), host=host, port=port, log_level="info")


if __name__ == "__main__":
    main()
