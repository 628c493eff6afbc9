"""Object model (named keypoints + triangle mesh) and scene point clouds."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree


@dataclass
class ObjectModel:
    """Named 3D keypoints plus a triangle mesh, all in the object frame."""

    keypoints: list[tuple[str, np.ndarray]]
    mesh_vertices: np.ndarray
    mesh_faces: np.ndarray

    def __post_init__(self) -> None:
        self.keypoints = [
            (kid, np.asarray(p, dtype=float).reshape(3)) for kid, p in self.keypoints
        ]
        if len(self.keypoints) < 4:
            raise ValueError(f"need at least 4 keypoints, got {len(self.keypoints)}")
        ids = [kid for kid, _ in self.keypoints]
        if len(ids) != len(set(ids)):
            raise ValueError("keypoint ids must be unique")
        self.mesh_vertices = np.asarray(self.mesh_vertices, dtype=float).reshape(-1, 3)
        self.mesh_faces = np.asarray(self.mesh_faces, dtype=int).reshape(-1, 3)
        if len(self.mesh_faces) and (
            self.mesh_faces.min() < 0 or self.mesh_faces.max() >= len(self.mesh_vertices)
        ):
            raise ValueError("mesh faces index out-of-range vertices")

    @property
    def keypoint_ids(self) -> list[str]:
        return [kid for kid, _ in self.keypoints]

    def keypoint_array(self) -> np.ndarray:
        return np.array([p for _, p in self.keypoints])

    def keypoint_map(self) -> dict[str, np.ndarray]:
        return {kid: p for kid, p in self.keypoints}


@dataclass
class PointCloud:
    """Scene points in the camera frame, with a lazily built spatial index."""

    points: np.ndarray
    _tree: Optional[cKDTree] = field(default=None, repr=False, compare=False)
    _resolution: Optional[float] = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.points)
        return self._tree

    @property
    def resolution(self) -> float:
        """Median nearest-neighbor spacing; the cloud's sampling scale."""
        if self._resolution is None:
            if len(self.points) < 2:
                self._resolution = 0.0
            else:
                dists, _ = self.tree.query(self.points, k=2)
                self._resolution = float(np.median(dists[:, 1]))
        return self._resolution
