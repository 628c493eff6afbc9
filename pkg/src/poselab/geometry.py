"""Core rotation/transform types and the pinhole camera model.

Conventions, pinned once for the whole package:

* Camera frame: +z forward, +x right, +y down; pixel origin at the top-left
  of the image, continuous pixel coordinates, sub-pixel allowed.
* Rotations are unit quaternions stored as (w, x, y, z), canonicalized so
  that w >= 0.
* Roll-pitch-yaw is the intrinsic Z-Y-X sequence (yaw about z, then pitch
  about the rotated y, then roll about the rotated x); degrees at the API
  boundary, radians internally.
* Lengths are meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import NonPositiveDepth

_QUAT_NORM_TOL = 1e-9
_UNIT_DIR_TOL = 1e-12


def as_vec3(v) -> np.ndarray:
    """Coerce to a finite float (3,) vector."""
    a = np.asarray(v, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector components must be finite")
    return a


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return as_vec3((x, y, z))


def as_pixel(p) -> np.ndarray:
    """Coerce to a finite float (u, v) pixel coordinate."""
    a = np.asarray(p, dtype=float)
    if a.shape != (2,):
        raise ValueError(f"expected a pixel (u, v), got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("pixel coordinates must be finite")
    return a


class UnitQuat:
    """Unit quaternion (w, x, y, z), canonicalized so w >= 0."""

    __slots__ = ("wxyz",)

    def __init__(self, wxyz) -> None:
        q = np.asarray(wxyz, dtype=float)
        if q.shape != (4,):
            raise ValueError(f"expected (w, x, y, z), got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise ValueError("quaternion components must be finite")
        norm = float(np.linalg.norm(q))
        if norm < 1e-12:
            raise ValueError("zero quaternion has no direction")
        if abs(norm - 1.0) > _QUAT_NORM_TOL:
            q = q / norm
        if q[0] < 0.0 or (q[0] == 0.0 and _first_nonzero(q[1:]) < 0.0):
            q = -q
        self.wxyz = q

    @property
    def w(self) -> float:
        return float(self.wxyz[0])

    @property
    def x(self) -> float:
        return float(self.wxyz[1])

    @property
    def y(self) -> float:
        return float(self.wxyz[2])

    @property
    def z(self) -> float:
        return float(self.wxyz[3])

    @staticmethod
    def identity() -> "UnitQuat":
        return UnitQuat((1.0, 0.0, 0.0, 0.0))

    @staticmethod
    def from_axis_angle(axis, angle_rad: float) -> "UnitQuat":
        a = as_vec3(axis)
        n = float(np.linalg.norm(a))
        if n < 1e-15:
            raise ValueError("rotation axis must be non-zero")
        a = a / n
        half = 0.5 * angle_rad
        s = math.sin(half)
        return UnitQuat((math.cos(half), a[0] * s, a[1] * s, a[2] * s))

    @staticmethod
    def from_matrix(rot: np.ndarray) -> "UnitQuat":
        """Quaternion of a 3x3 rotation matrix (max-trace branch method)."""
        m = np.asarray(rot, dtype=float)
        if m.shape != (3, 3):
            raise ValueError("expected a 3x3 rotation matrix")
        t = m[0, 0] + m[1, 1] + m[2, 2]
        if t > 0.0:
            s = math.sqrt(t + 1.0) * 2.0
            w = 0.25 * s
            x = (m[2, 1] - m[1, 2]) / s
            y = (m[0, 2] - m[2, 0]) / s
            z = (m[1, 0] - m[0, 1]) / s
        elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            w = (m[2, 1] - m[1, 2]) / s
            x = 0.25 * s
            y = (m[0, 1] + m[1, 0]) / s
            z = (m[0, 2] + m[2, 0]) / s
        elif m[1, 1] >= m[2, 2]:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            w = (m[0, 2] - m[2, 0]) / s
            x = (m[0, 1] + m[1, 0]) / s
            y = 0.25 * s
            z = (m[1, 2] + m[2, 1]) / s
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            w = (m[1, 0] - m[0, 1]) / s
            x = (m[0, 2] + m[2, 0]) / s
            y = (m[1, 2] + m[2, 1]) / s
            z = 0.25 * s
        return UnitQuat((w, x, y, z))

    @staticmethod
    def random(rng: np.random.Generator) -> "UnitQuat":
        """Uniformly distributed rotation (Shoemake's method)."""
        u1, u2, u3 = rng.random(3)
        a = math.sqrt(1.0 - u1)
        b = math.sqrt(u1)
        return UnitQuat(
            (
                a * math.sin(2.0 * math.pi * u2),
                a * math.cos(2.0 * math.pi * u2),
                b * math.sin(2.0 * math.pi * u3),
                b * math.cos(2.0 * math.pi * u3),
            )
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.wxyz
        return np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )

    def multiply(self, other: "UnitQuat") -> "UnitQuat":
        w1, x1, y1, z1 = self.wxyz
        w2, x2, y2, z2 = other.wxyz
        return UnitQuat(
            (
                w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
                w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
                w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
                w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            )
        )

    def conjugate(self) -> "UnitQuat":
        w, x, y, z = self.wxyz
        return UnitQuat((w, -x, -y, -z))

    def rotate(self, pts) -> np.ndarray:
        """Rotate one (3,) point or a batch (..., 3)."""
        a = np.asarray(pts, dtype=float)
        return a @ self.to_matrix().T

    def dot(self, other: "UnitQuat") -> float:
        return float(np.dot(self.wxyz, other.wxyz))

    def angle_to(self, other: "UnitQuat") -> float:
        """Geodesic angle in radians between two rotations.

        Evaluated via the quaternion chord (4 asin(|q -+ q'| / 2)), which is
        exact at zero where the acos form loses half its precision.
        """
        d_minus = float(np.linalg.norm(self.wxyz - other.wxyz))
        d_plus = float(np.linalg.norm(self.wxyz + other.wxyz))
        return 4.0 * math.asin(min(1.0, min(d_minus, d_plus) / 2.0))

    def __repr__(self) -> str:
        w, x, y, z = self.wxyz
        return f"UnitQuat(w={w:.6g}, x={x:.6g}, y={y:.6g}, z={z:.6g})"


def _first_nonzero(a: np.ndarray) -> float:
    for v in a:
        if v != 0.0:
            return float(v)
    return 0.0


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Rigid motion mapping points from `from_frame` into `to_frame`.

    Frame labels are carried as metadata only; composition does not enforce
    them.
    """

    rotation: UnitQuat
    translation: np.ndarray
    from_frame: str = ""
    to_frame: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "translation", as_vec3(self.translation))

    @staticmethod
    def identity(from_frame: str = "", to_frame: str = "") -> "RigidTransform":
        return RigidTransform(UnitQuat.identity(), np.zeros(3), from_frame, to_frame)

    @staticmethod
    def from_matrix(m: np.ndarray, from_frame: str = "", to_frame: str = "") -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        if m.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return RigidTransform(UnitQuat.from_matrix(m[:3, :3]), m[:3, 3], from_frame, to_frame)

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation.to_matrix()
        m[:3, 3] = self.translation
        return m

    def apply(self, pts) -> np.ndarray:
        """Transform one (3,) point or a batch (..., 3)."""
        return self.rotation.rotate(pts) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: apply `other` first, then `self`."""
        return RigidTransform(
            self.rotation.multiply(other.rotation),
            self.rotation.rotate(other.translation) + self.translation,
            other.from_frame,
            self.to_frame,
        )

    def invert(self) -> "RigidTransform":
        rot_inv = self.rotation.conjugate()
        return RigidTransform(
            rot_inv, -rot_inv.rotate(self.translation), self.to_frame, self.from_frame
        )

    def almost_equal(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return (
            np.allclose(self.translation, other.translation, atol=atol)
            and min(
                np.abs(self.rotation.wxyz - other.rotation.wxyz).max(),
                np.abs(self.rotation.wxyz + other.rotation.wxyz).max(),
            )
            <= atol
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(t: RigidTransform) -> RigidTransform:
    return t.invert()


def transform_point(t: RigidTransform, p) -> np.ndarray:
    return t.apply(as_vec3(p))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Ideal pinhole parameters, all in pixels."""

    fx: float
    fy: float
    px: float
    py: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        if not (0 <= self.px < self.width and 0 <= self.py < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.px], [0.0, self.fy, self.py], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class Ray:
    """Half-line from a camera center; direction is unit length."""

    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "origin", as_vec3(self.origin))
        d = as_vec3(self.direction)
        n = float(np.linalg.norm(d))
        if abs(n - 1.0) > _UNIT_DIR_TOL:
            if n < 1e-15:
                raise ValueError("ray direction must be non-zero")
            d = d / n
        object.__setattr__(self, "direction", d)


def project(intr: CameraIntrinsics, point_cam) -> np.ndarray:
    """Project one camera-frame point to pixel coordinates."""
    p = as_vec3(point_cam)
    if p[2] <= 0.0:
        raise NonPositiveDepth(f"point depth {p[2]:.6g} is not positive")
    return np.array(
        [intr.px + intr.fx * p[0] / p[2], intr.py + intr.fy * p[1] / p[2]]
    )


def project_points(intr: CameraIntrinsics, pts_cam: np.ndarray) -> np.ndarray:
    """Project an (N, 3) batch; raises if any depth is non-positive."""
    pts = np.asarray(pts_cam, dtype=float)
    z = pts[:, 2]
    if np.any(z <= 0.0):
        n_bad = int(np.count_nonzero(z <= 0.0))
        raise NonPositiveDepth(f"{n_bad} of {len(pts)} points have depth <= 0")
    out = np.empty((len(pts), 2))
    out[:, 0] = intr.px + intr.fx * pts[:, 0] / z
    out[:, 1] = intr.py + intr.fy * pts[:, 1] / z
    return out


def backproject(intr: CameraIntrinsics, pixel, depth: float) -> np.ndarray:
    """Camera-frame point at `depth` along the axis through `pixel`."""
    if depth <= 0.0:
        raise NonPositiveDepth(f"depth {depth:.6g} is not positive")
    u, v = as_pixel(pixel)
    return np.array(
        [depth / intr.fx * (u - intr.px), depth / intr.fy * (v - intr.py), depth]
    )


def pixel_direction(intr: CameraIntrinsics, pixel) -> np.ndarray:
    """Unit direction in the camera frame through a pixel."""
    u, v = as_pixel(pixel)
    d = np.array([(u - intr.px) / intr.fx, (v - intr.py) / intr.fy, 1.0])
    return d / np.linalg.norm(d)


class RollPitchYaw(NamedTuple):
    """Intrinsic Z-Y-X decomposition in degrees."""

    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False


_GIMBAL_TOL_RAD = 1e-6
_GIMBAL_SIN_LIMIT = math.cos(_GIMBAL_TOL_RAD)


def rpy_from_quat(q: UnitQuat) -> RollPitchYaw:
    """Decompose a rotation into (roll, pitch, yaw) degrees, Z-Y-X intrinsic.

    Within 1e-6 rad of pitch = +/-90 deg the decomposition is flagged (not
    failed): pitch is pinned to +/-90, roll to zero, and yaw absorbs the
    remaining angle. The lock test runs in sin space because asin loses half
    the float precision near +/-1.
    """
    m = q.to_matrix()
    s = float(np.clip(-m[2, 0], -1.0, 1.0))
    locked = abs(s) >= _GIMBAL_SIN_LIMIT
    if locked:
        pitch = math.copysign(0.5 * math.pi, s)
        roll = 0.0
        if s > 0:
            yaw = math.atan2(-m[0, 1], m[0, 2])
        else:
            yaw = math.atan2(-m[0, 1], -m[0, 2])
    else:
        pitch = math.asin(s)
        roll = math.atan2(m[2, 1], m[2, 2])
        yaw = math.atan2(m[1, 0], m[0, 0])
    return RollPitchYaw(
        math.degrees(roll), math.degrees(pitch), math.degrees(yaw), locked
    )


def quat_from_rpy(roll_deg: float, pitch_deg: float, yaw_deg: float) -> UnitQuat:
    """Rotation from (roll, pitch, yaw) degrees, Z-Y-X intrinsic."""
    hr = 0.5 * math.radians(roll_deg)
    hp = 0.5 * math.radians(pitch_deg)
    hy = 0.5 * math.radians(yaw_deg)
    cr, sr = math.cos(hr), math.sin(hr)
    cp, sp = math.cos(hp), math.sin(hp)
    cy, sy = math.cos(hy), math.sin(hy)
    return UnitQuat(
        (
            cy * cp * cr + sy * sp * sr,
            cy * cp * sr - sy * sp * cr,
            cy * sp * cr + sy * cp * sr,
            sy * cp * cr - cy * sp * sr,
        )
    )
