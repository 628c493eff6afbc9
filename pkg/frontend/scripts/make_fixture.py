"""Regenerate tests/fixtures/synthetic_project.json from a live service.

Builds a synthetic fixture project, drives the annotation flow through the
HTTP app in-process, and records every response the browser test replays.

Run from the frontend directory:  python3 scripts/make_fixture.py
"""

import json
import sys
from pathlib import Path
from tempfile import TemporaryDirectory

from click.testing import CliRunner
from fastapi.testclient import TestClient

from poselab.cli import main as cli
from poselab.manifest import ProjectStore
from poselab.service import create_app

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "synthetic_project.json"


def run() -> None:
    runner = CliRunner()
    with TemporaryDirectory() as tmp:
        fixture_dir = Path(tmp) / "fixture"
        project_dir = Path(tmp) / "project"
        steps = [
            ["synth", "project", "--out", str(fixture_dir), "--frames", "10", "--seed", "11"],
            [
                "init",
                str(project_dir),
                "--model", str(fixture_dir / "mesh.obj"),
                "--keypoints", str(fixture_dir / "keypoints.json"),
                "--intrinsics", str(fixture_dir / "intrinsics.json"),
                "--board", "7x5:0.03",
            ],
            [
                "import-frames", "s0", str(fixture_dir / "frames"),
                "--corners", str(fixture_dir / "corners"),
                "-p", str(project_dir),
            ],
        ]
        for step in steps:
            result = runner.invoke(cli, step)
            if result.exit_code != 0:
                sys.exit(f"step {step} failed: {result.output} {result.stderr}")

        annotations = json.loads((fixture_dir / "annotations.json").read_text())
        ground_truth = json.loads((fixture_dir / "ground_truth.json").read_text())

        store = ProjectStore(project_dir)
        store.load()
        client = TestClient(create_app(store))

        record: dict = {
            "project": client.get("/api/project").json(),
            "annotation_frames": annotations,
            "put_responses": {},
            "get_annotations_after": {},
            "overlays": {},
            "ground_truth": {
                fid: fr["keypoints_true"] for fid, fr in ground_truth["frames"].items()
            },
        }

        for frame_id, entries in annotations.items():
            body = {"revision": -1, "points": entries, "annotator": "annotator-ui"}
            response = client.put(f"/api/frames/{frame_id}/annotations", json=body)
            assert response.status_code == 200, response.text
            record["put_responses"][frame_id] = response.json()
            record["get_annotations_after"][frame_id] = client.get(
                f"/api/frames/{frame_id}/annotations"
            ).json()

        record["overlay_before_solve"] = {
            "status": 422,
            "body": client.get(
                f"/api/frames/{next(iter(ground_truth['frames']))}/overlay"
            ).json(),
        }
        record["triangulate_response"] = client.post("/api/sessions/s0/triangulate").json()
        record["solve_response"] = client.post("/api/sessions/s0/solve").json()
        record["project_after_solve"] = client.get("/api/project").json()

        for frame_id in ground_truth["frames"]:
            response = client.get(f"/api/frames/{frame_id}/overlay")
            assert response.status_code == 200, response.text
            record["overlays"][frame_id] = response.json()

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")
    print(f"wrote {OUT}")


if __name__ == "__main__":
    run()
