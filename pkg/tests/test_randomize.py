import numpy as np
import pytest

from poselab.errors import PatchTooLarge, ValidationError
from poselab.labelgen import LabeledPatch, domain_randomize, select_mixed
from poselab.labelgen.export import ExportItem
from poselab.manifest import BBox, DRConfig, FrameLabels, KeypointLabel


def _patch(rng, w=40, h=30):
    rgba = np.zeros((h, w, 4), dtype=np.uint8)
    rgba[:, :, :3] = rng.integers(0, 255, (h, w, 3))
    rgba[:, :, 3] = 255
    rgba[:5, :, 3] = 0  # some transparency
    kps = [
        KeypointLabel("a", 5.0, 10.0, True),
        KeypointLabel("b", 30.0, 20.0, False),
    ]
    hull = np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])
    return LabeledPatch(rgba, kps, hull)


def _backgrounds(rng, n=3, w=320, h=240):
    return [rng.integers(0, 255, (h, w, 3)).astype(np.uint8) for _ in range(n)]


def _identity_cfg(**kw):
    base = dict(
        n_samples=5,
        rotation_deg=(0.0, 0.0),
        scale=(1.0, 1.0),
        brightness=(1.0, 1.0),
        saturation=(1.0, 1.0),
        seed=7,
    )
    base.update(kw)
    return DRConfig(**base)


class TestDomainRandomize:
    def test_identity_augmentation_shifts_labels_only(self, rng):
        patch = _patch(rng)
        samples = domain_randomize([patch], _backgrounds(rng), _identity_cfg())
        for s in samples:
            shift = s.similarity.matrix[:, 2]
            assert np.allclose(s.similarity.matrix[:, :2], np.eye(2), atol=1e-12)
            assert shift == pytest.approx([round(shift[0]), round(shift[1])])
            for k_in, k_out in zip(patch.keypoints, s.keypoints):
                assert k_out.u == pytest.approx(k_in.u + shift[0], abs=1e-9)
                assert k_out.v == pytest.approx(k_in.v + shift[1], abs=1e-9)
                assert k_out.visible == k_in.visible

    def test_quarter_turn_rotates_labels_about_center(self, rng):
        patch = _patch(rng)
        cfg = _identity_cfg(rotation_deg=(90.0, 90.0), n_samples=3)
        samples = domain_randomize([patch], _backgrounds(rng), cfg)
        h, w = patch.rgba.shape[:2]
        center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
        for s in samples:
            pasted_center = s.similarity.apply(center[None])[0]
            for k_in, k_out in zip(patch.keypoints, s.keypoints):
                rel = np.array([k_in.u, k_in.v]) - center
                rotated = np.array([-rel[1], rel[0]])  # +90 deg
                expected = pasted_center + rotated
                assert np.allclose([k_out.u, k_out.v], expected, atol=1e-9)
            hull_out = s.similarity.apply(patch.hull)
            assert s.bbox.x_min == pytest.approx(hull_out[:, 0].min())
            assert s.bbox.y_max == pytest.approx(hull_out[:, 1].max())

    def test_sample_count_and_reproducibility(self, rng):
        patches = [_patch(rng), _patch(rng, w=25, h=50)]
        backgrounds = _backgrounds(rng, n=4)
        cfg = DRConfig(n_samples=64, seed=123)
        a = domain_randomize(patches, backgrounds, cfg)
        b = domain_randomize(patches, backgrounds, cfg)
        assert len(a) == len(b) == 64
        for sa, sb in zip(a, b):
            assert (sa.image == sb.image).all()
            assert sa.background_index == sb.background_index
            assert [(k.u, k.v) for k in sa.keypoints] == [(k.u, k.v) for k in sb.keypoints]

    def test_parallel_matches_serial(self, rng):
        patches = [_patch(rng)]
        backgrounds = _backgrounds(rng)
        cfg = DRConfig(n_samples=32, seed=5)
        serial = domain_randomize(patches, backgrounds, cfg, workers=1)
        parallel = domain_randomize(patches, backgrounds, cfg, workers=4)
        for sa, sb in zip(serial, parallel):
            assert (sa.image == sb.image).all()
            assert sa.similarity.matrix.tolist() == sb.similarity.matrix.tolist()

    def test_patch_too_large(self, rng):
        patch = _patch(rng, w=500, h=400)
        cfg = _identity_cfg(n_samples=1)
        with pytest.raises(PatchTooLarge):
            domain_randomize([patch], _backgrounds(rng, w=100, h=100), cfg)

    def test_labels_consistent_with_recorded_similarity(self, rng):
        patches = [_patch(rng)]
        cfg = DRConfig(n_samples=40, seed=99)
        samples = domain_randomize(patches, _backgrounds(rng), cfg)
        for s in samples:
            recomputed = s.similarity.apply(
                np.array([[k.u, k.v] for k in patches[0].keypoints])
            )
            emitted = np.array([[k.u, k.v] for k in s.keypoints])
            assert np.abs(recomputed - emitted).max() < 1e-9

    def test_composited_pixels_come_from_patch_or_background(self, rng):
        patch = _patch(rng)
        backgrounds = _backgrounds(rng, n=1)
        cfg = _identity_cfg(n_samples=1)
        (sample,) = domain_randomize([patch], backgrounds, cfg)
        shift = sample.similarity.matrix[:, 2].astype(int)
        h, w = patch.rgba.shape[:2]
        inside = sample.image[shift[1] : shift[1] + h, shift[0] : shift[0] + w]
        opaque = patch.rgba[:, :, 3] == 255
        assert (inside[opaque] == patch.rgba[:, :, :3][opaque]).all()
        untouched = np.ones(backgrounds[0].shape[:2], dtype=bool)
        untouched[shift[1] : shift[1] + h, shift[0] : shift[0] + w] = False
        assert (sample.image[untouched] == backgrounds[0][untouched]).all()

    def test_empty_inputs_rejected(self, rng):
        with pytest.raises(ValidationError):
            domain_randomize([], _backgrounds(rng), _identity_cfg())
        with pytest.raises(ValidationError):
            domain_randomize([_patch(rng)], [], _identity_cfg())


class TestSelectMixed:
    def _items(self, n, source):
        labels = FrameLabels([], BBox(0, 0, 1, 1))
        from pathlib import Path

        return [
            ExportItem(f"{source}_{i}", Path(f"{source}_{i}.png"), labels, 640, 480, source, str(i))
            for i in range(n)
        ]

    def test_one_to_one_ratio_with_short_real_pool(self):
        # 900 real / 2000 dr available, target 2000 -> 1000 + 1000
        real = self._items(900, "real")
        dr = self._items(2000, "dr")
        chosen = select_mixed(real, dr, "1:1", 2000, seed=3)
        n_real = sum(1 for c in chosen if c.source == "real")
        n_dr = sum(1 for c in chosen if c.source == "dr")
        assert (n_real, n_dr) == (1000, 1000)

    def test_deterministic_for_seed(self):
        real = self._items(50, "real")
        dr = self._items(50, "dr")
        a = select_mixed(real, dr, "3:7", 60, seed=11)
        b = select_mixed(real, dr, "3:7", 60, seed=11)
        assert [c.name for c in a] == [c.name for c in b]
        assert sum(1 for c in a if c.source == "real") == 18

    def test_no_target_takes_everything(self):
        real = self._items(5, "real")
        dr = self._items(7, "dr")
        chosen = select_mixed(real, dr, "1:1", None, seed=0)
        assert len(chosen) == 12

    def test_empty_pool_forfeits_share(self):
        dr = self._items(10, "dr")
        chosen = select_mixed([], dr, "1:1", 8, seed=0)
        assert len(chosen) == 8
        assert all(c.source == "dr" for c in chosen)


class TestExportDataset:
    def test_empty_manifest_writes_empty_index(self, tmp_path):
        from poselab.geometry import CameraIntrinsics
        from poselab.labelgen import export_dataset
        from poselab.manifest import BoardSpec, ProjectManifest

        manifest = ProjectManifest(
            project_id="empty",
            intrinsics=CameraIntrinsics(500, 500, 320, 240, 640, 480),
            board=BoardSpec(7, 5, 0.03),
            mesh_path="model/mesh.obj",
            keypoints_path="model/keypoints.json",
        )
        result = export_dataset(manifest, tmp_path, tmp_path / "out")
        assert result.n_real == 0 and result.n_dr == 0
        import json

        index = json.loads(result.index_path.read_text())
        assert index["items"] == []
        assert list((tmp_path / "out" / "labels").iterdir()) == []
