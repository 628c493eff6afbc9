"""Object pose estimation from 2D keypoints.

Two branches:

* PnP: a self-contained EPnP solver (4 control points, barycentric
  coordinates, candidate null-space scalings polished by Gauss-Newton on
  control-point distances) wrapped in RANSAC for outlier rejection.
* 3D lifting: keypoints are lifted into the camera frame by intersecting
  their pixel rays with a scene point cloud, a pairwise-distance-consistency
  affinity rejects outliers via its principal eigenvector, and the pose is
  the closed-form rigid alignment of the surviving correspondences.

An optional point-to-point ICP stage refines either result against the cloud.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .alignment import Correspondences3D, horn_align
from .errors import (
    ConsensusFailure,
    DegenerateConfiguration,
    GeometricError,
    InsufficientPoints,
    NoIntersection,
    NoMatches,
    SolverFailure,
    TooFewInliers,
    TooFewLifted,
    ValidationError,
)
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    as_pixel,
    backproject,
    pixel_direction,
)
from .model import ObjectModel, PointCloud

MIN_CORRESPONDENCES = 4
DEFAULT_SPECTRAL_SIGMA = 0.01  # meters, sized to hand-tool scale objects
DEFAULT_SPECTRAL_TAU = 0.5
DEFAULT_EPNP_FAIL_PX = 1e4
_POWER_ITERS = 200
_POWER_TOL = 1e-10
_COPLANAR_RATIO = 1e-6
_MIN_R_CYL = 0.003  # meters


@dataclass
class PoseEstimate:
    """Object-in-camera pose with provenance of how it was obtained."""

    pose: RigidTransform
    inlier_ids: list[str]
    method: str  # pnp_ransac | procrustes_3d | icp_refined
    residual: float  # mean reprojection (px) or 3D residual (m)
    rms_history: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.residual < 0:
            raise ValueError("residual must be non-negative")


@dataclass
class RansacConfig:
    iters: int = 500
    px_thresh: float = 2.0
    min_inliers: int = 6
    confidence: float = 0.999  # early-exit once this is reached
    seed: int = 0


@dataclass
class IcpConfig:
    max_iters: int = 30
    translation_tol: float = 1e-5  # meters
    rotation_tol_deg: float = 1e-3
    gate_multiplier: float = 5.0  # times cloud resolution


@dataclass
class LiftResult:
    points: list[tuple[str, np.ndarray]]
    dropped: dict[str, str] = field(default_factory=dict)


def default_ray_radius(cloud: PointCloud) -> float:
    """Cylinder radius for ray-cloud intersection: 2x sampling, 3 mm floor."""
    return max(2.0 * cloud.resolution, _MIN_R_CYL)


def keypoint_depth(
    pixel,
    intr: CameraIntrinsics,
    cloud: PointCloud,
    r_cyl: Optional[float] = None,
) -> float:
    """Depth (camera z) where the pixel ray first meets the point cloud.

    Cloud points whose perpendicular distance to the ray is below `r_cyl`
    are candidates; the one nearest the camera along the ray wins.
    """
    if len(cloud) == 0:
        raise ValueError("point cloud is empty")
    if r_cyl is None:
        r_cyl = default_ray_radius(cloud)
    direction = pixel_direction(intr, pixel)

    lo = cloud.points.min(axis=0)
    hi = cloud.points.max(axis=0)
    corners = np.array(
        [[a, b, c] for a in (lo[0], hi[0]) for b in (lo[1], hi[1]) for c in (lo[2], hi[2])]
    )
    t_max = float(corners @ direction) if corners.ndim == 1 else float((corners @ direction).max())
    t_max += r_cyl
    if t_max <= 0.0:
        raise NoIntersection("entire cloud is behind the camera along this ray")

    step = 2.0 * r_cyl
    centers_t = np.arange(0.5 * step, t_max + step, step)
    query_radius = math.hypot(0.5 * step, r_cyl)
    candidate_idx: set[int] = set()
    for hits in cloud.tree.query_ball_point(centers_t[:, None] * direction, query_radius):
        candidate_idx.update(hits)
    if not candidate_idx:
        raise NoIntersection("no cloud point near the pixel ray")

    pts = cloud.points[sorted(candidate_idx)]
    along = pts @ direction
    perp = np.linalg.norm(pts - along[:, None] * direction, axis=1)
    ok = (along > 0.0) & (perp < r_cyl)
    if not ok.any():
        raise NoIntersection("no cloud point within the ray cylinder")
    nearest = np.flatnonzero(ok)[np.argmin(along[ok])]
    return float(pts[nearest, 2])


def lift_keypoints(
    kps2d: Sequence[tuple[str, np.ndarray]],
    intr: CameraIntrinsics,
    cloud: PointCloud,
    r_cyl: Optional[float] = None,
) -> LiftResult:
    """Lift 2D keypoints to camera-frame 3D points via cloud depths.

    Keypoints whose ray misses the cloud are dropped with a reason; fewer
    than four survivors is an error.
    """
    result = LiftResult(points=[])
    for kid, px in kps2d:
        px = as_pixel(px)
        try:
            depth = keypoint_depth(px, intr, cloud, r_cyl)
        except NoIntersection as exc:
            result.dropped[kid] = str(exc)
            continue
        result.points.append((kid, backproject(intr, px, depth)))
    if len(result.points) < MIN_CORRESPONDENCES:
        raise TooFewLifted(
            f"only {len(result.points)} keypoints lifted, need >= {MIN_CORRESPONDENCES}"
        )
    return result


def spectral_inliers(
    observed: Sequence[tuple[str, np.ndarray]],
    model: ObjectModel,
    sigma: float = DEFAULT_SPECTRAL_SIGMA,
    tau: float = DEFAULT_SPECTRAL_TAU,
) -> set[str]:
    """Mutually distance-consistent subset of observed keypoints.

    Affinity W_ij = exp(-(d_obs(i,j) - d_mod(i,j))^2 / (2 sigma^2)) compares
    pairwise distances among observed points against the same pairs on the
    model; the principal eigenvector (power iteration) scores membership and
    ids scoring at least `tau` times the maximum are kept.
    """
    if len(observed) < MIN_CORRESPONDENCES:
        raise TooFewInliers(
            f"only {len(observed)} observed keypoints, need >= {MIN_CORRESPONDENCES}"
        )
    model_map = model.keypoint_map()
    ids = [kid for kid, _ in observed]
    for kid in ids:
        if kid not in model_map:
            raise ValidationError(f"keypoint id {kid!r} is not in the object model")
    obs = np.array([p for _, p in observed], dtype=float)
    mod = np.array([model_map[kid] for kid in ids])

    d_obs = np.linalg.norm(obs[:, None, :] - obs[None, :, :], axis=2)
    d_mod = np.linalg.norm(mod[:, None, :] - mod[None, :, :], axis=2)
    w = np.exp(-((d_obs - d_mod) ** 2) / (2.0 * sigma * sigma))
    np.fill_diagonal(w, 0.0)

    n = len(ids)
    u = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(_POWER_ITERS):
        nxt = w @ u
        norm = float(np.linalg.norm(nxt))
        if norm == 0.0:
            raise TooFewInliers("no mutually consistent keypoint pairs")
        nxt = nxt / norm
        if float(np.linalg.norm(nxt - u)) < _POWER_TOL:
            u = nxt
            break
        u = nxt
    u = np.abs(u)

    keep = u >= tau * u.max()
    if int(keep.sum()) < MIN_CORRESPONDENCES:
        raise TooFewInliers(
            f"{int(keep.sum())} keypoints passed the consistency threshold, "
            f"need >= {MIN_CORRESPONDENCES}"
        )
    return {ids[i] for i in np.flatnonzero(keep)}


def pose_procrustes_3d(
    observed: Sequence[tuple[str, np.ndarray]],
    model: ObjectModel,
) -> PoseEstimate:
    """Closed-form object-in-camera pose from lifted inlier keypoints."""
    model_map = model.keypoint_map()
    ids = [kid for kid, _ in observed]
    for kid in ids:
        if kid not in model_map:
            raise ValidationError(f"keypoint id {kid!r} is not in the object model")
    src = np.array([model_map[kid] for kid in ids])
    dst = np.array([p for _, p in observed], dtype=float)
    pose, rmsd = horn_align(Correspondences3D(src, dst))
    pose = RigidTransform(pose.rotation, pose.translation, "object", "camera")
    return PoseEstimate(pose, ids, "procrustes_3d", rmsd)


# ---------------------------------------------------------------------------
# EPnP


def _control_points(pts: np.ndarray) -> tuple[np.ndarray, bool]:
    """Centroid + principal-direction control points; 3 of them if planar."""
    n = len(pts)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    planar = s[2] < _COPLANAR_RATIO * s[0] if s[0] > 0 else True
    count = 3 if planar else 4
    ctrl = [centroid]
    for j in range(count - 1):
        ctrl.append(centroid + (s[j] / math.sqrt(n)) * vt[j])
    return np.array(ctrl), planar


def _barycentric(pts: np.ndarray, ctrl: np.ndarray) -> np.ndarray:
    """Coordinates alpha with sum 1 such that alpha @ ctrl reproduces pts."""
    m = len(ctrl)
    system = np.vstack([ctrl.T, np.ones(m)])  # (4, m)
    rhs = np.vstack([pts.T, np.ones(len(pts))])  # (4, n)
    if m == 4:
        return np.linalg.solve(system, rhs).T
    sol, *_ = np.linalg.lstsq(system, rhs, rcond=None)
    return sol.T


def _build_design_matrix(
    alphas: np.ndarray, pixels: np.ndarray, intr: CameraIntrinsics
) -> np.ndarray:
    n, m = alphas.shape
    design = np.zeros((2 * n, 3 * m))
    for j in range(m):
        a = alphas[:, j]
        design[0::2, 3 * j] = a * intr.fx
        design[0::2, 3 * j + 2] = a * (intr.px - pixels[:, 0])
        design[1::2, 3 * j + 1] = a * intr.fy
        design[1::2, 3 * j + 2] = a * (intr.py - pixels[:, 1])
    return design


def _pair_diffs(basis: np.ndarray, m: int) -> tuple[np.ndarray, list[tuple[int, int]]]:
    pairs = [(i, j) for i in range(m) for j in range(i + 1, m)]
    ctrl = basis.reshape(len(basis), m, 3)
    diffs = np.array([[ctrl[a, i] - ctrl[a, j] for (i, j) in pairs] for a in range(len(basis))])
    return diffs, pairs  # diffs: (n_basis, n_pairs, 3)


def _initial_betas(case: int, diffs: np.ndarray, d_sq: np.ndarray) -> np.ndarray:
    """Seed the scalings from the inter-control-point distance constraints.

    For one basis vector the scale is a direct least squares; for more, the
    quadratic system is relinearized in the products beta_a beta_b and the
    rank-1 structure recovered from the top eigenpair.
    """
    if case == 1:
        num = float(np.sum(np.sqrt(d_sq) * np.linalg.norm(diffs[0], axis=1)))
        den = float(np.sum(np.sum(diffs[0] ** 2, axis=1)))
        return np.array([num / den if den > 0 else 1.0])
    cols = []
    index_pairs = [(a, b) for a in range(case) for b in range(a, case)]
    for a, b in index_pairs:
        coeff = np.sum(diffs[a] * diffs[b], axis=1)
        cols.append(coeff if a == b else 2.0 * coeff)
    y, *_ = np.linalg.lstsq(np.column_stack(cols), d_sq, rcond=None)
    outer = np.zeros((case, case))
    for (a, b), val in zip(index_pairs, y):
        outer[a, b] = val
        outer[b, a] = val
    eigvals, eigvecs = np.linalg.eigh(outer)
    top = int(np.argmax(np.abs(eigvals)))
    return math.sqrt(abs(eigvals[top])) * eigvecs[:, top]


def _depth_seed_betas(
    pts: np.ndarray,
    pix: np.ndarray,
    intr: CameraIntrinsics,
    alphas: np.ndarray,
    basis: np.ndarray,
) -> np.ndarray:
    """Kernel coordinates of an equal-depth guess along the pixel rays."""
    dirs = np.array([pixel_direction(intr, p) for p in pix])
    n = len(pts)
    pair_idx = [(i, j) for i in range(n) for j in range(i + 1, n)]
    ray_gaps = np.array([np.sum((dirs[i] - dirs[j]) ** 2) for i, j in pair_idx])
    world_gaps = np.array([np.sum((pts[i] - pts[j]) ** 2) for i, j in pair_idx])
    denom = float(ray_gaps @ ray_gaps)
    scale = math.sqrt(max(float(world_gaps @ ray_gaps) / denom, 1e-12)) if denom > 0 else 1.0
    guess = scale * dirs
    ctrl_guess, *_ = np.linalg.lstsq(alphas, guess, rcond=None)
    return basis @ ctrl_guess.reshape(-1)


def _refine_betas(betas: np.ndarray, diffs: np.ndarray, d_sq: np.ndarray) -> np.ndarray:
    """Gauss-Newton on control-point distance constraints."""
    for _ in range(15):
        combo = np.tensordot(betas, diffs, axes=1)  # (n_pairs, 3)
        residual = np.sum(combo**2, axis=1) - d_sq
        jac = 2.0 * np.einsum("pk,apk->pa", combo, diffs)
        step, *_ = np.linalg.lstsq(jac, -residual, rcond=None)
        betas = betas + step
        if float(np.linalg.norm(step)) < 1e-14:
            break
    return betas


def epnp(
    model_pts: np.ndarray,
    pixels: np.ndarray,
    intr: CameraIntrinsics,
    fail_px: float = DEFAULT_EPNP_FAIL_PX,
) -> RigidTransform:
    """Non-iterative PnP via control-point parameterization.

    World points are expressed barycentrically in 4 control points (3 when
    the set is coplanar); the camera-frame control points solve a linear
    system whose null-space scalings (dimensions 1-3) are estimated from
    inter-control-point distances and polished by Gauss-Newton. The best
    candidate by reprojection wins; the final pose aligns world to camera
    control points.
    """
    pts = np.asarray(model_pts, dtype=float).reshape(-1, 3)
    pix = np.asarray(pixels, dtype=float).reshape(-1, 2)
    if len(pts) != len(pix):
        raise ValueError("one pixel per model point required")
    if len(pts) < MIN_CORRESPONDENCES:
        raise InsufficientPoints(f"need >= 4 correspondences, got {len(pts)}")

    ctrl_w, planar = _control_points(pts)
    m = len(ctrl_w)
    alphas = _barycentric(pts, ctrl_w)
    design = _build_design_matrix(alphas, pix, intr)
    _, _, vt = np.linalg.svd(design, full_matrices=True)
    n_basis = 4 if not planar else 3  # minimal samples leave a ker this wide
    basis = vt[-1 : -(n_basis + 1) : -1]  # smallest singular vectors first

    diffs, pairs = _pair_diffs(basis, m)
    d_sq = np.array([np.sum((ctrl_w[i] - ctrl_w[j]) ** 2) for i, j in pairs])
    depth_beta = _depth_seed_betas(pts, pix, intr, alphas, basis)

    best_pose: Optional[RigidTransform] = None
    best_err = math.inf
    prev_beta: Optional[np.ndarray] = None
    for case in range(1, n_basis + 1):
        # Minimal samples leave a wide null space with several distance-
        # consistent embeddings; multiple seeds keep Gauss-Newton out of the
        # wrong basins and reprojection picks the winner.
        seeds = [_initial_betas(case, diffs[:case], d_sq), depth_beta[:case]]
        if prev_beta is not None:
            seeds.append(np.append(prev_beta, 0.0))
        if case == n_basis and case > 1:
            scale = _initial_betas(1, diffs[:1], d_sq)[0]
            for axis in range(case):
                unit = np.zeros(case)
                unit[axis] = scale
                seeds.extend([unit, -unit])
        case_beta = None
        case_err = math.inf
        for seed in seeds:
            betas = _refine_betas(np.asarray(seed, dtype=float), diffs[:case], d_sq)
            x = np.tensordot(betas, basis[:case], axes=1)
            ctrl_c = x.reshape(m, 3)
            if (alphas @ ctrl_c)[:, 2].mean() < 0:
                ctrl_c = -ctrl_c
            try:
                pose, _ = horn_align(Correspondences3D(ctrl_w, ctrl_c))
            except DegenerateConfiguration:
                continue
            err = float(np.mean(_reprojection_errors(pose, pts, pix, intr)))
            if not math.isfinite(err):
                continue
            if err < case_err:
                case_err = err
                case_beta = betas
            if err < best_err:
                best_err = err
                best_pose = pose
        prev_beta = case_beta if case_beta is not None else np.zeros(case)

    if best_pose is None or best_err > fail_px:
        raise SolverFailure(
            f"no control-point scaling produced a usable pose "
            f"(best reprojection {best_err:.3g} px)"
        )
    return RigidTransform(best_pose.rotation, best_pose.translation, "object", "camera")


def _reprojection_errors(
    pose: RigidTransform,
    model_pts: np.ndarray,
    pixels: np.ndarray,
    intr: CameraIntrinsics,
) -> np.ndarray:
    cam = pose.apply(model_pts)
    err = np.full(len(model_pts), np.inf)
    front = cam[:, 2] > 0
    if front.any():
        z = cam[front, 2]
        u = intr.px + intr.fx * cam[front, 0] / z
        v = intr.py + intr.fy * cam[front, 1] / z
        err[front] = np.hypot(u - pixels[front, 0], v - pixels[front, 1])
    return err


def _ransac_rounds_needed(inlier_ratio: float, confidence: float) -> float:
    if inlier_ratio >= 1.0:
        return 0.0
    miss = 1.0 - inlier_ratio**4
    if miss >= 1.0:
        return math.inf
    return math.log(1.0 - confidence) / math.log(miss)


def pnp_ransac(
    kps2d: Sequence[tuple[str, np.ndarray]],
    model: ObjectModel,
    intr: CameraIntrinsics,
    cfg: Optional[RansacConfig] = None,
) -> PoseEstimate:
    """RANSAC over minimal EPnP samples, refit on the consensus set.

    Deterministic for a fixed `cfg.seed`; stops early once the sampled
    consensus makes further rounds statistically pointless.
    """
    cfg = cfg or RansacConfig()
    model_map = model.keypoint_map()
    ids = [kid for kid, _ in kps2d]
    for kid in ids:
        if kid not in model_map:
            raise ValidationError(f"keypoint id {kid!r} is not in the object model")
    if len(ids) < MIN_CORRESPONDENCES:
        raise InsufficientPoints(f"need >= 4 keypoints, got {len(ids)}")
    pts = np.array([model_map[kid] for kid in ids])
    pix = np.array([as_pixel(px) for _, px in kps2d])
    n = len(ids)

    rng = np.random.default_rng(cfg.seed)
    best_mask: Optional[np.ndarray] = None
    best_pose: Optional[RigidTransform] = None
    best_count = 0
    best_mean = math.inf
    rounds_needed = float(cfg.iters)

    for round_idx in range(cfg.iters):
        if round_idx >= rounds_needed:
            break
        sample = rng.choice(n, size=4, replace=False)
        try:
            pose = epnp(pts[sample], pix[sample], intr)
        except GeometricError:
            continue
        err = _reprojection_errors(pose, pts, pix, intr)
        mask = err < cfg.px_thresh
        count = int(mask.sum())
        mean_err = float(err[mask].mean()) if count else math.inf
        if count > best_count or (count == best_count and mean_err < best_mean):
            best_mask, best_pose, best_count, best_mean = mask, pose, count, mean_err
            rounds_needed = min(
                float(cfg.iters),
                _ransac_rounds_needed(count / n, cfg.confidence),
            )

    if best_pose is None or best_count < cfg.min_inliers:
        raise ConsensusFailure(
            f"best consensus {best_count} of {n} keypoints, "
            f"need >= {cfg.min_inliers}"
        )

    # Refit on the consensus set; keep it only if it does not lose support.
    pose, mask = best_pose, best_mask
    try:
        refit = epnp(pts[best_mask], pix[best_mask], intr)
        refit_err = _reprojection_errors(refit, pts, pix, intr)
        refit_mask = refit_err < cfg.px_thresh
        if int(refit_mask.sum()) >= best_count:
            pose, mask = refit, refit_mask
    except GeometricError:
        pass

    err = _reprojection_errors(pose, pts, pix, intr)
    inlier_ids = [ids[i] for i in np.flatnonzero(mask)]
    return PoseEstimate(pose, inlier_ids, "pnp_ransac", float(err[mask].mean()))


def icp_refine(
    initial: PoseEstimate,
    model: ObjectModel,
    scene: PointCloud,
    cfg: Optional[IcpConfig] = None,
) -> PoseEstimate:
    """Point-to-point ICP of the model vertices against a scene cloud.

    Pairs beyond `gate_multiplier` times the cloud resolution are rejected
    each round; a worsening alignment step is never accepted, so the
    recorded matched-pair RMS history is non-increasing.
    """
    cfg = cfg or IcpConfig()
    verts = model.mesh_vertices
    if len(verts) == 0:
        raise ValueError("object model has no mesh vertices")
    gate = cfg.gate_multiplier * scene.resolution
    if gate <= 0:
        gate = math.inf

    pose = initial.pose
    history: list[float] = []
    prev_rms = math.inf
    for _ in range(cfg.max_iters):
        moved = pose.apply(verts)
        dists, idx = scene.tree.query(moved)
        keep = dists <= gate
        if not keep.any():
            raise NoMatches(
                f"every nearest scene point is farther than the {gate:.4g} m gate"
            )
        pairs = Correspondences3D(verts[keep], scene.points[idx[keep]])
        new_pose, rms = horn_align(pairs)
        if rms > prev_rms + 1e-12:
            break
        delta_t = float(np.linalg.norm(new_pose.translation - pose.translation))
        delta_rot = math.degrees(new_pose.rotation.angle_to(pose.rotation))
        pose = new_pose
        history.append(rms)
        prev_rms = rms
        if delta_t < cfg.translation_tol and delta_rot < cfg.rotation_tol_deg:
            break

    pose = RigidTransform(pose.rotation, pose.translation, "object", "camera")
    return PoseEstimate(
        pose, list(initial.inlier_ids), "icp_refined", history[-1], tuple(history)
    )


def estimate_pose(
    kps2d: Sequence[tuple[str, np.ndarray]],
    model: ObjectModel,
    intr: CameraIntrinsics,
    branch: str = "pnp",
    cloud: Optional[PointCloud] = None,
    use_icp: bool = False,
    ransac: Optional[RansacConfig] = None,
    icp: Optional[IcpConfig] = None,
    sigma: float = DEFAULT_SPECTRAL_SIGMA,
    tau: float = DEFAULT_SPECTRAL_TAU,
    r_cyl: Optional[float] = None,
) -> PoseEstimate:
    """Run one of the two estimation branches, optionally ICP-refined."""
    if branch == "pnp":
        estimate = pnp_ransac(kps2d, model, intr, ransac)
    elif branch == "procrustes":
        if cloud is None:
            raise ValidationError("the 3D branch requires a scene point cloud")
        lifted = lift_keypoints(kps2d, intr, cloud, r_cyl)
        inliers = spectral_inliers(lifted.points, model, sigma, tau)
        kept = [(kid, p) for kid, p in lifted.points if kid in inliers]
        estimate = pose_procrustes_3d(kept, model)
    else:
        raise ValidationError(f"unknown branch {branch!r} (expected pnp|procrustes)")
    if use_icp:
        if cloud is None:
            raise ValidationError("ICP refinement requires a scene point cloud")
        estimate = icp_refine(estimate, model, cloud, icp)
    return estimate
