import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from poselab.cli import main
from poselab.manifest import ProjectStore, pose_from_dict
from poselab.service import JobManager, create_app


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc_fixture")
    runner = CliRunner()
    result = runner.invoke(
        main,
        ["synth", "project", "--out", str(out), "--frames", "10", "--seed", "11"],
    )
    assert result.exit_code == 0, result.output + result.stderr
    return out


@pytest.fixture()
def project(tmp_path, fixture_dir):
    """Fresh unannotated project per test."""
    runner = CliRunner()
    proj = tmp_path / "proj"
    steps = [
        [
            "init",
            str(proj),
            "--model",
            str(fixture_dir / "mesh.obj"),
            "--keypoints",
            str(fixture_dir / "keypoints.json"),
            "--intrinsics",
            str(fixture_dir / "intrinsics.json"),
            "--board",
            "7x5:0.03",
        ],
        [
            "import-frames",
            "s0",
            str(fixture_dir / "frames"),
            "--corners",
            str(fixture_dir / "corners"),
            "-p",
            str(proj),
        ],
    ]
    for step in steps:
        result = runner.invoke(main, step)
        assert result.exit_code == 0, result.output + result.stderr
    return proj


@pytest.fixture()
def client(project):
    store = ProjectStore(project)
    store.load()
    return TestClient(create_app(store))


def _truth(fixture_dir):
    return json.loads((fixture_dir / "ground_truth.json").read_text())


def _annotations(fixture_dir):
    return json.loads((fixture_dir / "annotations.json").read_text())


class TestProjectEndpoints:
    def test_summary(self, client):
        r = client.get("/api/project")
        assert r.status_code == 200
        doc = r.json()
        assert doc["schema_version"] == 1
        assert len(doc["keypoint_ids"]) == 20
        assert doc["sessions"][0]["session_id"] == "s0"
        assert len(doc["sessions"][0]["frames"]) == 10
        assert all(f["has_camera_pose"] for f in doc["sessions"][0]["frames"])

    def test_image_returns_png(self, client):
        frames = client.get("/api/project").json()["sessions"][0]["frames"]
        r = client.get(f"/api/frames/{frames[0]['frame_id']}/image")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_frame_404(self, client):
        assert client.get("/api/frames/nope/image").status_code == 404
        assert client.get("/api/frames/nope/annotations").status_code == 404


class TestAnnotations:
    def test_put_get_round_trip(self, client, fixture_dir):
        frame_id, entries = next(iter(_annotations(fixture_dir).items()))
        body = {"revision": -1, "points": entries, "annotator": "ui"}
        r = client.put(f"/api/frames/{frame_id}/annotations", json=body)
        assert r.status_code == 200
        assert r.json()["revision"] == 0
        got = client.get(f"/api/frames/{frame_id}/annotations").json()
        assert got["revision"] == 0
        assert got["annotator"] == "ui"
        assert got["points"] == [
            {"keypoint_id": e["keypoint_id"], "u": e["u"], "v": e["v"]} for e in entries
        ]

    def test_unknown_keypoint_400_with_field_path(self, client, fixture_dir):
        frame_id = next(iter(_annotations(fixture_dir)))
        body = {
            "revision": -1,
            "points": [{"keypoint_id": "bogus", "u": 10.0, "v": 10.0}],
        }
        r = client.put(f"/api/frames/{frame_id}/annotations", json=body)
        assert r.status_code == 400
        doc = r.json()
        assert doc["error"] == "ValidationError"
        assert doc["field"] == "points[0].keypoint_id"

    def test_duplicate_keypoint_400(self, client, fixture_dir):
        frame_id = next(iter(_annotations(fixture_dir)))
        point = {"keypoint_id": "c0", "u": 10.0, "v": 10.0}
        r = client.put(
            f"/api/frames/{frame_id}/annotations",
            json={"revision": -1, "points": [point, point]},
        )
        assert r.status_code == 400
        assert r.json()["field"] == "points[1].keypoint_id"

    def test_out_of_bounds_400(self, client, fixture_dir):
        frame_id = next(iter(_annotations(fixture_dir)))
        r = client.put(
            f"/api/frames/{frame_id}/annotations",
            json={"revision": -1, "points": [{"keypoint_id": "c0", "u": 5000.0, "v": 10.0}]},
        )
        assert r.status_code == 400

    def test_malformed_body_400(self, client, fixture_dir):
        frame_id = next(iter(_annotations(fixture_dir)))
        r = client.put(
            f"/api/frames/{frame_id}/annotations",
            json={"points": [{"keypoint_id": "c0", "u": "NaN?"}]},
        )
        assert r.status_code == 400
        assert "field" in r.json()

    def test_stale_revision_409(self, client, fixture_dir):
        frame_id, entries = next(iter(_annotations(fixture_dir).items()))
        body = {"revision": -1, "points": entries}
        assert client.put(f"/api/frames/{frame_id}/annotations", json=body).status_code == 200
        r = client.put(f"/api/frames/{frame_id}/annotations", json=body)
        assert r.status_code == 409
        assert r.json()["error"] == "RevisionConflict"
        assert r.json()["server_revision"] == 0


class TestTriangulateAndSolve:
    def _annotate_all(self, client, fixture_dir):
        for frame_id, entries in _annotations(fixture_dir).items():
            r = client.put(
                f"/api/frames/{frame_id}/annotations",
                json={"revision": -1, "points": entries},
            )
            assert r.status_code == 200

    def test_single_observation_reported_skipped(self, client, fixture_dir):
        frame_id = next(iter(_annotations(fixture_dir)))
        r = client.put(
            f"/api/frames/{frame_id}/annotations",
            json={"revision": -1, "points": [{"keypoint_id": "c0", "u": 100.0, "v": 100.0},
                                              {"keypoint_id": "c1", "u": 120.0, "v": 100.0}]},
        )
        assert r.status_code == 200
        r = client.post("/api/sessions/s0/triangulate")
        assert r.status_code == 422  # nothing observed twice
        assert r.json()["error"] == "NoTriangulableKeypoints"

        # add one shared keypoint in a second frame: the rest stay skipped
        other = list(_annotations(fixture_dir))[1]
        r = client.put(
            f"/api/frames/{other}/annotations",
            json={"revision": -1, "points": [{"keypoint_id": "c0", "u": 200.0, "v": 140.0}]},
        )
        assert r.status_code == 200
        r = client.post("/api/sessions/s0/triangulate")
        assert r.status_code == 200
        doc = r.json()
        assert [kp["keypoint_id"] for kp in doc["keypoints"]] == ["c0"]
        assert "c1" in doc["skipped"]

    def test_annotate_solve_closure(self, client, fixture_dir):
        # 6 keypoints in 5 frames through the API, then solve
        self._annotate_all(client, fixture_dir)
        r = client.post("/api/sessions/s0/triangulate")
        assert r.status_code == 200
        assert len(r.json()["keypoints"]) == 6
        for kp in r.json()["keypoints"]:
            assert kp["residual_rms"] < 1e-9
            assert kp["n_rays"] == 5

        r = client.post("/api/sessions/s0/solve")
        assert r.status_code == 200
        doc = r.json()
        assert doc["rmsd"] < 1e-9
        pose = pose_from_dict(doc["object_pose_in_marker"])
        expected = pose_from_dict(_truth(fixture_dir)["object_pose_in_marker"])
        assert np.linalg.norm(pose.translation - expected.translation) < 1e-6
        assert math.degrees(pose.rotation.angle_to(expected.rotation)) < 1e-4

    def test_unsolved_overlay_422(self, client, fixture_dir):
        frame_id = next(iter(_annotations(fixture_dir)))
        r = client.get(f"/api/frames/{frame_id}/overlay")
        assert r.status_code == 422
        assert r.json()["error"] == "MissingObjectPose"

    def test_overlay_matches_ground_truth(self, client, fixture_dir):
        self._annotate_all(client, fixture_dir)
        assert client.post("/api/sessions/s0/solve").status_code == 200
        truth = _truth(fixture_dir)
        for frame_id, frame_truth in list(truth["frames"].items())[:4]:
            r = client.get(f"/api/frames/{frame_id}/overlay")
            assert r.status_code == 200
            doc = r.json()
            got = {k["id"]: (k["u"], k["v"]) for k in doc["keypoints"]}
            for kid, px in frame_truth["keypoints_true"].items():
                assert np.allclose(got[kid], px, atol=2.0)  # UI QA tolerance
                assert np.allclose(got[kid], px, atol=1e-6)  # noiseless fixture
            assert doc["bbox"]["x_max"] > doc["bbox"]["x_min"]


class TestJobs:
    def test_export_job_completes(self, project, tmp_path, fixture_dir):
        from poselab.labelgen import propagate_labels

        store = ProjectStore(project)
        store.load()
        client = TestClient(create_app(store))
        self._solve_and_label(client, fixture_dir)
        manifest = store.manifest
        propagate_labels(manifest.session("s0"), manifest.intrinsics, store.object_model())
        store.save(manifest)

        r = client.post("/api/jobs/export", json={"out_dir": str(tmp_path / "ds")})
        assert r.status_code == 202
        job_id = r.json()["job_id"]
        status = self._wait(client, job_id)
        assert status["state"] == "done", status
        assert status["detail"]["n_real"] > 0

    def test_unknown_job_404(self, client):
        assert client.get("/api/jobs/deadbeef").status_code == 404

    def test_busy_slot_409(self):
        jobs = JobManager()
        release = {"flag": False}

        def slow():
            while not release["flag"]:
                time.sleep(0.01)
            return {}

        job_id = jobs.start("randomize", slow)
        with pytest.raises(Exception):
            jobs.start("export", lambda: {})
        release["flag"] = True
        for _ in range(100):
            if jobs.status(job_id)["state"] == "done":
                break
            time.sleep(0.02)
        assert jobs.status(job_id)["state"] == "done"
        jobs.start("export", lambda: {})  # slot free again

    def _solve_and_label(self, client, fixture_dir):
        for frame_id, entries in _annotations(fixture_dir).items():
            client.put(
                f"/api/frames/{frame_id}/annotations",
                json={"revision": -1, "points": entries},
            )
        assert client.post("/api/sessions/s0/solve").status_code == 200

    def _wait(self, client, job_id, timeout=10.0):
        deadline = time.time() + timeout
        while time.time() < deadline:
            doc = client.get(f"/api/jobs/{job_id}").json()
            if doc["state"] != "running":
                return doc
            time.sleep(0.05)
        raise TimeoutError("job did not finish")


class TestValidationNeverPersisted:
    def test_manifest_still_parses_after_rejected_write(self, client, project, fixture_dir):
        frame_id = next(iter(_annotations(fixture_dir)))
        client.put(
            f"/api/frames/{frame_id}/annotations",
            json={"revision": -1, "points": [{"keypoint_id": "bogus", "u": 1.0, "v": 1.0}]},
        )
        ProjectStore(project).load()  # parses, no torn state
