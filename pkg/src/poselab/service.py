"""JSON-over-HTTP annotation service for one project.

The browser annotator drives the manual step through this API: fetch frames,
save clicked keypoints, trigger triangulation and the object-pose solve, and
review reprojected overlays. Reads are concurrent; every mutation runs under
the single project-store writer, and manifests are validated before commit.

Status codes: 400 malformed input, 404 unknown id, 409 stale-revision write
or busy job slot, 422 geometric failure (the module error name is in the
body).
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .errors import GeometricError, PoseLabError, ValidationError
from .geometry import project_points
from .imgio import load_rgb, png_bytes
from .labelgen import (
    bbox_from_model,
    domain_randomize,
    export_dataset,
    keypoint_visibility,
    object_pose_in_marker,
    propagate_labels,
    rasterize_depth,
    write_dr_outputs,
)
from .manifest import (
    DRConfig,
    FrameAnnotations,
    ProjectStore,
    bbox_to_dict,
    pose_to_dict,
)
from .triangulation import AnnotationSet, triangulate_keypoints

SCHEMA_VERSION = 1


class AnnotationPointIn(BaseModel):
    keypoint_id: str
    u: float
    v: float


class AnnotationsIn(BaseModel):
    revision: int
    points: list[AnnotationPointIn]
    annotator: str = ""


class RandomizeJobIn(BaseModel):
    workers: int = 1


class ExportJobIn(BaseModel):
    out_dir: str
    ratio: Optional[str] = None
    target: Optional[int] = None
    seed: Optional[int] = None


class JobManager:
    """At most one long-running job per project; polled by id."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._jobs: dict[str, dict] = {}
        self._active: Optional[str] = None

    def start(self, kind: str, target) -> str:
        with self._lock:
            if self._active is not None and self._jobs[self._active]["state"] == "running":
                raise _Busy(self._active)
            job_id = uuid.uuid4().hex[:12]
            self._jobs[job_id] = {"job_id": job_id, "kind": kind, "state": "running", "detail": None}
            self._active = job_id

        def run():
            try:
                detail = target()
                self._jobs[job_id].update(state="done", detail=detail)
            except Exception as exc:  # surfaced via the status endpoint
                self._jobs[job_id].update(
                    state="error", detail={"error": type(exc).__name__, "message": str(exc)}
                )

        threading.Thread(target=run, daemon=True).start()
        return job_id

    def status(self, job_id: str) -> Optional[dict]:
        return self._jobs.get(job_id)


class _Busy(Exception):
    def __init__(self, job_id: str) -> None:
        super().__init__(f"job {job_id} is still running")
        self.job_id = job_id


def _ok(payload: dict, status_code: int = 200) -> JSONResponse:
    payload = {"schema_version": SCHEMA_VERSION, **payload}
    return JSONResponse(payload, status_code=status_code)


def _error(status_code: int, error: str, message: str, **extra) -> JSONResponse:
    body = {"schema_version": SCHEMA_VERSION, "error": error, "message": message, **extra}
    return JSONResponse(body, status_code=status_code)


def create_app(store: ProjectStore, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="poselab annotation service", docs_url=None, redoc_url=None)
    jobs = JobManager()

    @app.exception_handler(RequestValidationError)
    async def on_request_validation(_: Request, exc: RequestValidationError):
        first = exc.errors()[0] if exc.errors() else {}
        path = ".".join(str(p) for p in first.get("loc", []) if p != "body")
        return _error(400, "ValidationError", first.get("msg", "invalid request"), field=path)

    @app.exception_handler(PoseLabError)
    async def on_poselab_error(_: Request, exc: PoseLabError):
        if isinstance(exc, ValidationError):
            return _error(400, type(exc).__name__, str(exc))
        if isinstance(exc, GeometricError):
            return _error(422, type(exc).__name__, str(exc))
        return _error(400, type(exc).__name__, str(exc))

    @app.exception_handler(_Busy)
    async def on_busy(_: Request, exc: _Busy):
        return _error(409, "JobRunning", str(exc), job_id=exc.job_id)

    @app.exception_handler(KeyError)
    async def on_missing(_: Request, exc: KeyError):
        return _error(404, "NotFound", f"unknown id {exc.args[0]!r}")

    @app.get("/api/project")
    def project_summary():
        m = store.manifest
        model = store.object_model()
        return _ok(
            {
                "project_id": m.project_id,
                "revision": m.revision,
                "keypoint_ids": model.keypoint_ids,
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
                "sessions": [
                    {
                        "session_id": s.session_id,
                        "solved": s.object_pose_in_marker is not None,
                        "solve_rmsd": s.solve_rmsd,
                        "frames": [
                            {
                                "frame_id": fr.frame_id,
                                "has_camera_pose": fr.camera_pose_in_marker is not None,
                                "n_annotations": len(fr.annotations.points) if fr.annotations else 0,
                                "labeled": fr.labels is not None,
                                "valid": fr.valid,
                            }
                            for fr in s.frames
                        ],
                    }
                    for s in m.sessions
                ],
            }
        )

    @app.get("/api/frames/{frame_id}/image")
    def frame_image(frame_id: str):
        _, frame = store.manifest.find_frame(frame_id)
        path = store.resolve(frame.image_path)
        if path.suffix.lower() == ".png":
            data = Path(path).read_bytes()
        else:
            data = png_bytes(load_rgb(path))
        return Response(content=data, media_type="image/png")

    @app.get("/api/frames/{frame_id}/annotations")
    def get_annotations(frame_id: str):
        _, frame = store.manifest.find_frame(frame_id)
        ann = frame.annotations
        return _ok(
            {
                "frame_id": frame_id,
                "revision": ann.revision if ann else -1,
                "annotator": ann.annotator if ann else "",
                "points": [
                    {"keypoint_id": kid, "u": uv[0], "v": uv[1]}
                    for kid, uv in (ann.points if ann else [])
                ],
            }
        )

    @app.put("/api/frames/{frame_id}/annotations")
    def put_annotations(frame_id: str, body: AnnotationsIn):
        with store.lock:
            manifest = store.manifest
            _, frame = manifest.find_frame(frame_id)
            current = frame.annotations.revision if frame.annotations else -1
            if body.revision != current:
                return _error(
                    409,
                    "RevisionConflict",
                    f"annotations changed (server revision {current}, yours {body.revision})",
                    server_revision=current,
                )
            model_ids = set(store.object_model().keypoint_ids)
            intr = manifest.intrinsics
            seen = set()
            for i, p in enumerate(body.points):
                if p.keypoint_id not in model_ids:
                    return _error(
                        400,
                        "ValidationError",
                        f"unknown keypoint id {p.keypoint_id!r}",
                        field=f"points[{i}].keypoint_id",
                    )
                if p.keypoint_id in seen:
                    return _error(
                        400,
                        "ValidationError",
                        f"keypoint {p.keypoint_id!r} placed twice",
                        field=f"points[{i}].keypoint_id",
                    )
                seen.add(p.keypoint_id)
                if not (0 <= p.u < intr.width and 0 <= p.v < intr.height):
                    return _error(
                        400,
                        "ValidationError",
                        f"({p.u}, {p.v}) is outside the {intr.width}x{intr.height} image",
                        field=f"points[{i}]",
                    )
            frame.annotations = FrameAnnotations(
                [(p.keypoint_id, (p.u, p.v)) for p in body.points],
                body.annotator,
                current + 1,
            )
            store.save(manifest)
            return _ok({"frame_id": frame_id, "revision": current + 1})

    @app.post("/api/sessions/{session_id}/triangulate")
    def triangulate_session(session_id: str):
        manifest = store.manifest
        session = manifest.session(session_id)
        sets, poses = _annotation_sets(session)
        if not sets:
            raise ValidationError(f"session {session_id!r} has no annotations")
        result = triangulate_keypoints(sets, poses, manifest.intrinsics)
        return _ok(
            {
                "session_id": session_id,
                "keypoints": [
                    {
                        "keypoint_id": kp.keypoint_id,
                        "position": [float(v) for v in kp.position],
                        "residual_rms": kp.residual_rms,
                        "n_rays": kp.n_rays,
                    }
                    for kp in result.keypoints
                ],
                "skipped": result.skipped,
            }
        )

    @app.post("/api/sessions/{session_id}/solve")
    def solve_session(session_id: str):
        with store.lock:
            manifest = store.manifest
            session = manifest.session(session_id)
            sets, poses = _annotation_sets(session)
            if not sets:
                raise ValidationError(f"session {session_id!r} has no annotations")
            result = triangulate_keypoints(sets, poses, manifest.intrinsics)
            pose, rmsd = object_pose_in_marker(result.keypoints, store.object_model())
            session.object_pose_in_marker = pose
            session.solve_rmsd = rmsd
            store.save(manifest)
            return _ok(
                {
                    "session_id": session_id,
                    "object_pose_in_marker": pose_to_dict(pose),
                    "rmsd": rmsd,
                    "n_keypoints": len(result.keypoints),
                    "skipped": result.skipped,
                }
            )

    @app.get("/api/frames/{frame_id}/overlay")
    def frame_overlay(frame_id: str):
        manifest = store.manifest
        session, frame = manifest.find_frame(frame_id)
        if session.object_pose_in_marker is None:
            return _error(422, "MissingObjectPose", "session is not solved yet")
        if frame.camera_pose_in_marker is None:
            return _error(422, "MissingCameraPose", f"frame {frame_id!r} has no camera pose")
        model = store.object_model()
        obj_in_cam = frame.camera_pose_in_marker.invert().compose(session.object_pose_in_marker)
        kp_cam = obj_in_cam.apply(model.keypoint_array())
        if np.any(kp_cam[:, 2] <= 0):
            return _error(422, "BehindCamera", "object projects behind the camera")
        bbox = bbox_from_model(obj_in_cam, model, manifest.intrinsics)
        pixels = project_points(manifest.intrinsics, kp_cam)
        buf = rasterize_depth(
            obj_in_cam.apply(model.mesh_vertices), model.mesh_faces, manifest.intrinsics
        )
        visible = keypoint_visibility(kp_cam, pixels, buf)
        return _ok(
            {
                "frame_id": frame_id,
                "solve_rmsd": session.solve_rmsd,
                "keypoints": [
                    {"id": kid, "u": float(px[0]), "v": float(px[1]), "visible": bool(vis)}
                    for kid, px, vis in zip(model.keypoint_ids, pixels, visible)
                ],
                "bbox": bbox_to_dict(bbox),
            }
        )

    @app.post("/api/jobs/randomize", status_code=202)
    def start_randomize(body: RandomizeJobIn):
        from .cli import collect_patches, load_backgrounds

        manifest = store.manifest
        cfg = manifest.dr
        if cfg is None or not cfg.background_dir:
            raise ValidationError("project has no domain-randomization config")

        def run():
            model = store.object_model()
            patches = collect_patches(store, model)
            backgrounds = load_backgrounds(store.resolve(cfg.background_dir))
            samples = domain_randomize(patches, backgrounds, cfg, workers=body.workers)
            write_dr_outputs(store.root, samples, cfg.seed)
            return {"n_samples": len(samples)}

        job_id = jobs.start("randomize", run)
        return _ok({"job_id": job_id, "kind": "randomize", "state": "running"}, 202)

    @app.post("/api/jobs/export", status_code=202)
    def start_export(body: ExportJobIn):
        def run():
            result = export_dataset(
                store.manifest,
                store.root,
                body.out_dir,
                ratio=body.ratio,
                target=body.target,
                seed=body.seed,
            )
            return {"n_real": result.n_real, "n_dr": result.n_dr, "out_dir": str(result.out_dir)}

        job_id = jobs.start("export", run)
        return _ok({"job_id": job_id, "kind": "export", "state": "running"}, 202)

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        status = jobs.status(job_id)
        if status is None:
            raise KeyError(job_id)
        return _ok(status)

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app


def _annotation_sets(session):
    sets, poses = [], {}
    for fr in session.frames:
        if fr.annotations and fr.annotations.points:
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
