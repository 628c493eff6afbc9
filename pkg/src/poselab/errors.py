"""Exception types shared across the toolkit."""


class PoseLabError(Exception):
    """Base class for every error raised by this package."""


class GeometricError(PoseLabError):
    """A computation failed for geometric reasons (degenerate input, no solution)."""


class ValidationError(PoseLabError):
    """Input data violates a documented contract (schema, bounds, identifiers)."""


class NonPositiveDepth(GeometricError):
    """A point with z <= 0 cannot be projected or back-projected."""


class DegenerateRays(GeometricError):
    """Ray bundle is too close to parallel for a stable intersection."""


class NoTriangulableKeypoints(GeometricError):
    """No keypoint was observed in at least two frames."""


class DegenerateConfiguration(GeometricError):
    """Point set cannot constrain a rigid alignment (too few or collinear)."""


class NoConvergence(GeometricError):
    """Iterative solver hit its iteration cap before reaching tolerance."""


class NoIntersection(GeometricError):
    """A pixel ray passed the point cloud without meeting any point."""


class TooFewLifted(GeometricError):
    """Fewer than four keypoints could be lifted to 3D."""


class TooFewInliers(GeometricError):
    """Outlier rejection left fewer than four usable keypoints."""


class InsufficientPoints(GeometricError):
    """Not enough 2D-3D correspondences for the solver."""


class SolverFailure(GeometricError):
    """All solver candidates were rejected (reprojection above threshold)."""


class ConsensusFailure(GeometricError):
    """RANSAC never found a consensus set of the required size."""


class NoMatches(GeometricError):
    """Every candidate ICP pair was farther than the distance gate."""


class DegenerateHomography(GeometricError):
    """Planar correspondences are collinear or otherwise rank-deficient."""


class MissingObjectPose(GeometricError):
    """Session has no solved object pose yet."""


class MissingCameraPose(GeometricError):
    """Frame has no camera pose; labels cannot be propagated."""


class BehindCamera(GeometricError):
    """A model vertex projects behind the camera."""


class PatchTooLarge(PoseLabError):
    """Transformed foreground patch does not fit inside any background."""
