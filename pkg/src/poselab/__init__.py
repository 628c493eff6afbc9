"""poselab: multi-view keypoint triangulation, 6-DoF object pose estimation,
and semi-automated pose-label generation."""

__version__ = "0.1.0"

from .geometry import (
    CameraIntrinsics,
    Ray,
    RigidTransform,
    RollPitchYaw,
    UnitQuat,
    backproject,
    compose,
    invert,
    project,
    project_points,
    quat_from_rpy,
    rpy_from_quat,
    transform_point,
    vec3,
)
from .alignment import Correspondences3D, horn_align, max_eigvec_sym4
from .model import ObjectModel, PointCloud
from .pose import (
    IcpConfig,
    LiftResult,
    PoseEstimate,
    RansacConfig,
    epnp,
    estimate_pose,
    icp_refine,
    keypoint_depth,
    lift_keypoints,
    pnp_ransac,
    pose_procrustes_3d,
    spectral_inliers,
)
from .triangulation import (
    AnnotationSet,
    Keypoint3D,
    TriangulationResult,
    pixel_ray,
    triangulate_keypoints,
    triangulate_point,
)

__all__ = [name for name in dir() if not name.startswith("_")]
