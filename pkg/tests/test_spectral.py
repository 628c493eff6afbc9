import numpy as np
import pytest

from oracles import max_consistent_subset
from poselab.errors import TooFewInliers
from poselab.geometry import RigidTransform, UnitQuat
from poselab.pose import spectral_inliers

# separates 2 mm inlier noise from >= 0.1 m planted displacements
ORACLE_GATE = 0.02


def _observed(model, pose, rng=None, noise=0.0, n=None):
    ids = model.keypoint_ids[: n or len(model.keypoint_ids)]
    kp = model.keypoint_map()
    out = []
    for kid in ids:
        p = pose.apply(kp[kid])
        if noise and rng is not None:
            p = p + rng.normal(0, noise, 3)
        out.append((kid, p))
    return out


@pytest.fixture
def pose(rng):
    return RigidTransform(UnitQuat.random(rng), np.array([0.1, -0.05, 0.9]))


class TestSpectralInliers:
    def test_noiseless_all_inliers(self, box_model, pose):
        observed = _observed(box_model, pose, n=10)
        assert spectral_inliers(observed, box_model) == {kid for kid, _ in observed}

    def test_single_displaced_point_rejected(self, box_model, pose, rng):
        observed = _observed(box_model, pose, n=10)
        shift = rng.normal(size=3)
        displaced = observed[3][1] + 0.2 * shift / np.linalg.norm(shift)
        observed[3] = (observed[3][0], displaced)
        inliers = spectral_inliers(observed, box_model)
        assert inliers == {kid for kid, _ in observed} - {observed[3][0]}

        # the exact max-consistent-subset oracle agrees
        obs_pts = np.array([p for _, p in observed])
        mod_pts = np.array([box_model.keypoint_map()[kid] for kid, _ in observed])
        clique = max_consistent_subset(obs_pts, mod_pts, ORACLE_GATE)
        assert {observed[i][0] for i in clique} == inliers

    def test_eight_of_twenty_outliers(self, box_model, pose, rng):
        observed = _observed(box_model, pose, rng=rng, noise=0.002)
        outlier_idx = rng.choice(20, size=8, replace=False)
        for i in outlier_idx:
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            observed[i] = (
                observed[i][0],
                observed[i][1] + rng.uniform(0.1, 0.25) * direction,
            )
        inliers = spectral_inliers(observed, box_model)
        planted = {observed[i][0] for i in outlier_idx}
        assert not (inliers & planted)  # all planted outliers rejected
        false_rejections = {kid for kid, _ in observed} - planted - inliers
        assert len(false_rejections) <= 1

    def test_rigid_motion_leaves_affinity_unchanged(self, box_model, pose, rng):
        observed = _observed(box_model, pose, rng=rng, noise=0.003)
        motion = RigidTransform(UnitQuat.random(rng), rng.uniform(-1, 1, 3))
        moved = [(kid, motion.apply(p)) for kid, p in observed]
        assert spectral_inliers(observed, box_model) == spectral_inliers(moved, box_model)

        # rigid motion preserves every pairwise distance, so the affinity
        # matrix is unchanged to within float noise
        sigma = 0.01
        for pts in (observed,):
            a = np.array([p for _, p in pts])
            b = np.array([p for _, p in moved])
            mod = np.array([box_model.keypoint_map()[kid] for kid, _ in pts])
            d_mod = np.linalg.norm(mod[:, None] - mod[None, :], axis=2)
            w_a = np.exp(-((np.linalg.norm(a[:, None] - a[None, :], axis=2) - d_mod) ** 2) / (2 * sigma**2))
            w_b = np.exp(-((np.linalg.norm(b[:, None] - b[None, :], axis=2) - d_mod) ** 2) / (2 * sigma**2))
            assert np.abs(w_a - w_b).max() < 1e-12

    def test_permutation_invariance(self, box_model, pose, rng):
        observed = _observed(box_model, pose, rng=rng, noise=0.004)
        perm = list(rng.permutation(len(observed)))
        shuffled = [observed[i] for i in perm]
        assert spectral_inliers(observed, box_model) == spectral_inliers(shuffled, box_model)

    def test_too_few_observed(self, box_model, pose):
        with pytest.raises(TooFewInliers):
            spectral_inliers(_observed(box_model, pose, n=3), box_model)

    def test_everything_inconsistent(self, box_model, rng):
        observed = [
            (kid, rng.uniform(-5, 5, 3)) for kid in box_model.keypoint_ids[:8]
        ]
        with pytest.raises(TooFewInliers):
            spectral_inliers(observed, box_model, sigma=0.001)
