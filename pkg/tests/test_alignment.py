import math

import numpy as np
import pytest

from poselab.alignment import Correspondences3D, horn_align, max_eigvec_sym4
from poselab.errors import DegenerateConfiguration
from poselab.geometry import RigidTransform, UnitQuat


class TestMaxEigvecSym4:
    def test_diagonal_matrix(self):
        res = max_eigvec_sym4(np.diag([4.0, 3.0, 2.0, 1.0]))
        assert abs(res.value - 4.0) < 1e-12
        assert np.allclose(np.abs(res.vector), [1, 0, 0, 0], atol=1e-12)
        assert not res.degenerate_multiplicity

    def test_identity_is_flagged_degenerate(self):
        res = max_eigvec_sym4(np.eye(4))
        assert abs(res.value - 1.0) < 1e-12
        assert abs(np.linalg.norm(res.vector) - 1.0) < 1e-12
        assert res.degenerate_multiplicity

    def test_random_symmetric_against_rayleigh_quotients(self, rng):
        for _ in range(100):
            a = rng.normal(size=(4, 4))
            m = 0.5 * (a + a.T)
            res = max_eigvec_sym4(m)
            assert np.linalg.norm(m @ res.vector - res.value * res.vector) < 1e-10
            # the maximal eigenvalue dominates every Rayleigh quotient
            for _ in range(100):
                v = rng.normal(size=4)
                v /= np.linalg.norm(v)
                assert res.value >= float(v @ m @ v) - 1e-10

    def test_asymmetric_matrix_rejected(self):
        m = np.eye(4)
        m[0, 1] = 1e-6
        with pytest.raises(ValueError):
            max_eigvec_sym4(m)


class TestHornAlign:
    def test_exact_rotation_translation(self):
        src = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        truth = RigidTransform(
            UnitQuat.from_axis_angle((0, 0, 1), math.pi / 2), np.array([1.0, 2.0, 3.0])
        )
        dst = truth.apply(src)
        transform, rmsd = horn_align(Correspondences3D(src, dst))
        half = math.sqrt(2) / 2
        assert np.allclose(transform.rotation.wxyz, [half, 0, 0, half], atol=1e-12)
        assert np.allclose(transform.translation, [1, 2, 3], atol=1e-12)
        assert rmsd < 1e-12

    def test_identical_sets_give_identity(self, rng):
        src = rng.normal(size=(10, 3))
        transform, rmsd = horn_align(Correspondences3D(src, src.copy()))
        assert transform.almost_equal(RigidTransform.identity(), atol=1e-9)
        assert rmsd < 1e-12

    def test_collinear_sources_rejected(self):
        src = np.array([[0, 0, 0], [1, 1, 1], [2, 2, 2]], dtype=float)
        with pytest.raises(DegenerateConfiguration):
            horn_align(Correspondences3D(src, src + 1.0))

    def test_too_few_pairs_rejected(self):
        with pytest.raises(DegenerateConfiguration):
            Correspondences3D(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_noisy_recovery_and_perturbation_optimality(self, rng):
        # 20 random points, random pose, 1 mm noise; the recovered pose must
        # beat 1000 random small perturbations of itself on rmsd.
        src = rng.uniform(-0.2, 0.2, size=(20, 3))
        truth = RigidTransform(UnitQuat.random(rng), rng.uniform(-1, 1, size=3))
        dst = truth.apply(src) + rng.normal(0, 0.001, size=(20, 3))

        transform, rmsd = horn_align(Correspondences3D(src, dst))
        err_t = np.linalg.norm(transform.translation - truth.translation)
        err_rot = math.degrees(transform.rotation.angle_to(truth.rotation))
        assert err_t < 0.002
        assert err_rot < 0.5

        for _ in range(1000):
            axis = rng.normal(size=3)
            angle = rng.uniform(1e-5, math.radians(0.5))
            jitter = RigidTransform(
                UnitQuat.from_axis_angle(axis, angle), rng.normal(0, 5e-4, size=3)
            )
            perturbed = jitter.compose(transform)
            res = perturbed.apply(src) - dst
            perturbed_rmsd = math.sqrt(np.mean(np.sum(res**2, axis=1)))
            assert perturbed_rmsd >= rmsd - 1e-15

    def test_rmsd_beats_identity_alignment(self, rng):
        src = rng.normal(size=(12, 3))
        dst = src + rng.normal(0, 0.05, size=src.shape)
        _, rmsd = horn_align(Correspondences3D(src, dst))
        identity_rmsd = math.sqrt(np.mean(np.sum((src - dst) ** 2, axis=1)))
        assert rmsd <= identity_rmsd + 1e-15

    def test_equivariance_under_source_rotation(self, rng):
        src = rng.normal(size=(15, 3))
        truth = RigidTransform(UnitQuat.random(rng), rng.normal(size=3))
        dst = truth.apply(src)
        pre = RigidTransform(UnitQuat.random(rng), np.zeros(3))
        rotated_src = pre.apply(src)
        t1, _ = horn_align(Correspondences3D(rotated_src, dst))
        # aligning pre-rotated sources recovers truth composed with pre^-1
        assert t1.almost_equal(truth.compose(pre.invert()), atol=1e-9)

    def test_equal_weights_match_unweighted(self, rng):
        src = rng.normal(size=(9, 3))
        dst = src @ UnitQuat.random(rng).to_matrix().T + rng.normal(0, 0.01, size=(9, 3))
        t0, r0 = horn_align(Correspondences3D(src, dst))
        t1, r1 = horn_align(Correspondences3D(src, dst, weights=np.full(9, 3.7)))
        assert t0.almost_equal(t1, atol=1e-12)
        assert abs(r0 - r1) < 1e-12

    def test_permutation_invariance(self, rng):
        src = rng.normal(size=(11, 3))
        dst = src + rng.normal(0, 0.02, size=src.shape)
        t0, r0 = horn_align(Correspondences3D(src, dst))
        perm = rng.permutation(11)
        t1, r1 = horn_align(Correspondences3D(src[perm], dst[perm]))
        assert t0.almost_equal(t1, atol=1e-9)
        assert abs(r0 - r1) < 1e-12

    def test_weighted_pull_toward_heavy_pair(self, rng):
        # a heavily weighted outlying pair must drag the fit toward itself
        src = rng.normal(size=(6, 3))
        dst = src.copy()
        dst[0] += (0.5, 0, 0)
        w = np.ones(6)
        w[0] = 100.0
        t_heavy, _ = horn_align(Correspondences3D(src, dst, weights=w))
        t_plain, _ = horn_align(Correspondences3D(src, dst))
        assert t_heavy.translation[0] > t_plain.translation[0]
