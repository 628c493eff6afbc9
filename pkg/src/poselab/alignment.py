"""Closed-form rigid alignment of corresponded 3D point sets.

The rotation is recovered from the maximal eigenvector of the 4x4 symmetric
quaternion matrix built from the weighted cross-covariance of the centered
point sets; the translation follows from the (weighted) centroids. No scale
factor is estimated: the inputs are metric.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import DegenerateConfiguration, NoConvergence
from .geometry import RigidTransform, UnitQuat

_COLLINEAR_RATIO = 1e-9
_JACOBI_SWEEPS = 100
_JACOBI_TOL = 1e-12
_EIG_GAP_RATIO = 1e-8


@dataclass
class Correspondences3D:
    """Paired (source -> target) points with optional non-negative weights."""

    source: np.ndarray
    target: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.source = np.asarray(self.source, dtype=float).reshape(-1, 3)
        self.target = np.asarray(self.target, dtype=float).reshape(-1, 3)
        if len(self.source) != len(self.target):
            raise ValueError("source and target must pair up one-to-one")
        if len(self.source) < 3:
            raise DegenerateConfiguration(
                f"need at least 3 pairs, got {len(self.source)}"
            )
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
            if len(self.weights) != len(self.source):
                raise ValueError("one weight per pair required")
            if np.any(self.weights < 0) or not np.any(self.weights > 0):
                raise ValueError("weights must be non-negative with a positive sum")


class EigResult(NamedTuple):
    value: float
    vector: np.ndarray
    degenerate_multiplicity: bool


def max_eigvec_sym4(m: np.ndarray, max_sweeps: int = _JACOBI_SWEEPS) -> EigResult:
    """Maximal eigenpair of a symmetric 4x4 matrix via cyclic Jacobi sweeps.

    Flags (rather than fails) when the top eigenvalue is nearly repeated, in
    which case any vector in the top eigenspace is acceptable.
    """
    a = np.asarray(m, dtype=float)
    if a.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    if np.abs(a - a.T).max() > 1e-12:
        raise ValueError("matrix is not symmetric within 1e-12")
    a = 0.5 * (a + a.T)

    scale = max(1.0, float(np.linalg.norm(a)))
    tol = _JACOBI_TOL * scale
    v = np.eye(4)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2) * 2.0)
        if off <= tol:
            break
        for p in range(3):
            for q in range(p + 1, 4):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(4)
                rot[p, p] = c
                rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    else:
        raise NoConvergence(f"Jacobi sweeps did not converge in {max_sweeps} passes")

    eigvals = np.diag(a)
    order = np.argsort(eigvals)[::-1]
    top = order[0]
    gap = eigvals[order[0]] - eigvals[order[1]]
    degenerate = gap <= _EIG_GAP_RATIO * scale
    vec = v[:, top]
    vec = vec / np.linalg.norm(vec)
    return EigResult(float(eigvals[top]), vec, bool(degenerate))


def _quaternion_profile_matrix(src_c: np.ndarray, dst_c: np.ndarray, w: np.ndarray) -> np.ndarray:
    s = (src_c * w[:, None]).T @ dst_c  # S[a, b] = sum w * src_a * dst_b
    sxx, sxy, sxz = s[0]
    syx, syy, syz = s[1]
    szx, szy, szz = s[2]
    return np.array(
        [
            [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
            [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
            [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
            [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
        ]
    )


def horn_align(c: Correspondences3D) -> tuple[RigidTransform, float]:
    """Best rigid transform taking source points onto target points.

    Returns the minimizer of sum w_i ||T(s_i) - d_i||^2 and the weighted RMS
    residual of that optimum. Raises DegenerateConfiguration when the source
    points are (nearly) collinear, which leaves a rotation about the line
    unobservable.
    """
    n = len(c.source)
    w = np.ones(n) if c.weights is None else c.weights
    wsum = float(w.sum())

    src_centroid = (c.source * w[:, None]).sum(axis=0) / wsum
    dst_centroid = (c.target * w[:, None]).sum(axis=0) / wsum
    src_c = c.source - src_centroid
    dst_c = c.target - dst_centroid

    sv = np.linalg.svd(src_c * np.sqrt(w)[:, None], compute_uv=False)
    if sv[0] <= 0.0 or (sv[1] < _COLLINEAR_RATIO * sv[0] and sv[2] < _COLLINEAR_RATIO * sv[0]):
        raise DegenerateConfiguration("source points are collinear or coincident")

    profile = _quaternion_profile_matrix(src_c, dst_c, w)
    eig = max_eigvec_sym4(profile)
    rotation = UnitQuat(eig.vector)
    translation = dst_centroid - rotation.rotate(src_centroid)
    transform = RigidTransform(rotation, translation)

    residuals = transform.apply(c.source) - c.target
    rmsd = float(np.sqrt((w * np.sum(residuals**2, axis=1)).sum() / wsum))
    return transform, rmsd
