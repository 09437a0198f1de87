"""Rigid transforms, quaternions, pinhole projection and pose-error metrics.

Conventions
-----------
* Quaternions are stored ``(w, x, y, z)``.
* A :class:`Pose` maps world to camera: ``X_cam = R @ (X_world - center)``.
  ``center`` is the camera centre expressed in the world frame, so the
  translation error between two poses is the distance between centres.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

_NORM_TOL = 1e-12


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, q, normalize: bool = True) -> "Quaternion":
        w, x, y, z = (float(v) for v in q)
        out = cls(w, x, y, z)
        return out.normalized() if normalize else out

    @classmethod
    def from_axis_angle(cls, axis, angle: float) -> "Quaternion":
        """Rotation of ``angle`` radians about ``axis``."""
        axis = np.asarray(axis, dtype=np.float64)
        n = np.linalg.norm(axis)
        if n == 0.0:
            raise ValueError("rotation axis must be nonzero")
        s = math.sin(angle / 2.0) / n
        return cls(math.cos(angle / 2.0), axis[0] * s, axis[1] * s, axis[2] * s)

    @classmethod
    def from_rotvec(cls, rotvec) -> "Quaternion":
        rotvec = np.asarray(rotvec, dtype=np.float64)
        angle = float(np.linalg.norm(rotvec))
        if angle < 1e-12:
            # second-order expansion keeps the result unit to machine precision
            half = 0.5 * rotvec
            return cls(1.0, half[0], half[1], half[2]).normalized()
        return cls.from_axis_angle(rotvec, angle)

    @classmethod
    def from_matrix(cls, R) -> "Quaternion":
        """Shepperd's method; numerically stable for every rotation."""
        R = np.asarray(R, dtype=np.float64)
        tr = R[0, 0] + R[1, 1] + R[2, 2]
        diag = (tr, R[0, 0], R[1, 1], R[2, 2])
        i = int(np.argmax(diag))
        if i == 0:
            s = 2.0 * math.sqrt(max(1.0 + tr, 0.0))
            q = (0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s,
                 (R[1, 0] - R[0, 1]) / s)
        elif i == 1:
            s = 2.0 * math.sqrt(max(1.0 + R[0, 0] - R[1, 1] - R[2, 2], 0.0))
            q = ((R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s,
                 (R[0, 2] + R[2, 0]) / s)
        elif i == 2:
            s = 2.0 * math.sqrt(max(1.0 + R[1, 1] - R[0, 0] - R[2, 2], 0.0))
            q = ((R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s,
                 (R[1, 2] + R[2, 1]) / s)
        else:
            s = 2.0 * math.sqrt(max(1.0 + R[2, 2] - R[0, 0] - R[1, 1], 0.0))
            q = ((R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                 (R[1, 2] + R[2, 1]) / s, 0.25 * s)
        out = cls(*q).normalized()
        # canonical hemisphere keeps serialized output stable
        return out if out.w >= 0.0 else -out

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Quaternion":
        """Uniformly distributed rotation."""
        v = rng.normal(size=4)
        return cls.from_array(v)

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z], dtype=np.float64)

    def norm(self) -> float:
        return math.sqrt(self.w * self.w + self.x * self.x + self.y * self.y + self.z * self.z)

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if not math.isfinite(n) or n == 0.0:
            raise ValueError("cannot normalize a zero or non-finite quaternion")
        if abs(n - 1.0) <= _NORM_TOL:
            return self
        return Quaternion(self.w / n, self.x / n, self.y / n, self.z / n)

    def conjugate(self) -> "Quaternion":
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    inverse = conjugate  # unit quaternions only

    def __neg__(self) -> "Quaternion":
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        a, b = self, other
        return Quaternion(
            a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
            a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
            a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
            a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
        )

    def to_matrix(self) -> np.ndarray:
        w, x, y, z = self.w, self.x, self.y, self.z
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def angle_to(self, other: "Quaternion") -> float:
        """Geodesic angle in radians between two rotations (sign invariant)."""
        r = self.conjugate() * other
        vec = math.sqrt(r.x * r.x + r.y * r.y + r.z * r.z)
        # 2*atan2(|v|, |w|) == 2*arccos(|w|) for unit r, without the loss of
        # precision arccos suffers near zero.
        return 2.0 * math.atan2(vec, abs(r.w))


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform stored as rotation + camera centre."""

    rotation: Quaternion
    center: np.ndarray = field(default_factory=lambda: _frozen(np.zeros(3)))

    def __post_init__(self):
        object.__setattr__(self, "rotation", self.rotation.normalized())
        c = _frozen(self.center)
        if c.shape != (3,) or not np.all(np.isfinite(c)):
            raise ValueError("pose center must be a finite 3-vector")
        object.__setattr__(self, "center", c)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(Quaternion.identity(), np.zeros(3))

    @classmethod
    def from_Rt(cls, R, t) -> "Pose":
        """Build from ``X_cam = R @ X_world + t``."""
        R = np.asarray(R, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        return cls(Quaternion.from_matrix(R), -R.T @ t)

    @property
    def R(self) -> np.ndarray:
        return self.rotation.to_matrix()

    @property
    def t(self) -> np.ndarray:
        return -self.R @ self.center

    def transform(self, points) -> np.ndarray:
        """World points ``(..., 3)`` into the camera frame."""
        points = np.asarray(points, dtype=np.float64)
        return (points - self.center) @ self.R.T

    def inverse(self) -> "Pose":
        R, t = self.R, self.t
        return Pose.from_Rt(R.T, -R.T @ t)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        R1, t1 = self.R, self.t
        R2, t2 = other.R, other.t
        return Pose(self.rotation * other.rotation, -(R1 @ R2).T @ (R1 @ t2 + t1))

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return self.rotation == other.rotation and np.array_equal(self.center, other.center)

    def __hash__(self):
        return hash((self.rotation, self.center.tobytes()))


@dataclass(frozen=True)
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def in_bounds(self, uv) -> np.ndarray:
        uv = np.asarray(uv, dtype=np.float64)
        return ((uv[..., 0] >= 0) & (uv[..., 0] < self.width)
                & (uv[..., 1] >= 0) & (uv[..., 1] < self.height))

    def bearings(self, uv) -> np.ndarray:
        """Unit viewing rays in the camera frame for pixels ``(N, 2)``."""
        uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
        rays = np.column_stack([(uv[:, 0] - self.cx) / self.fx,
                                (uv[:, 1] - self.cy) / self.fy,
                                np.ones(len(uv))])
        return rays / np.linalg.norm(rays, axis=1, keepdims=True)


MIN_DEPTH = 1e-9


def project_points(camera: Camera, pose: Pose, points):
    """Vectorized projection; returns ``(uv, depth)`` for points ``(N, 3)``.

    Pixels for points with depth <= ``MIN_DEPTH`` are NaN.
    """
    Xc = pose.transform(np.atleast_2d(points))
    z = Xc[:, 2]
    uv = np.full((len(Xc), 2), np.nan)
    ok = z > MIN_DEPTH
    uv[ok, 0] = camera.fx * Xc[ok, 0] / z[ok] + camera.cx
    uv[ok, 1] = camera.fy * Xc[ok, 1] / z[ok] + camera.cy
    return uv, z


def project(camera: Camera, pose: Pose, point) -> Optional[np.ndarray]:
    """Pixel of a single world point, or ``None`` when it is behind the camera."""
    uv, z = project_points(camera, pose, np.asarray(point, dtype=np.float64).reshape(1, 3))
    if not z[0] > MIN_DEPTH:
        return None
    return uv[0]


def unproject(camera: Camera, pose: Pose, uv, depth: float) -> np.ndarray:
    """World point at camera-frame ``depth`` along the ray through ``uv``."""
    u, v = float(uv[0]), float(uv[1])
    Xc = np.array([(u - camera.cx) / camera.fx * depth, (v - camera.cy) / camera.fy * depth, depth])
    return pose.R.T @ Xc + pose.center


def translation_error(estimate: Pose, truth: Pose) -> float:
    """Distance in metres between the two camera centres."""
    return float(np.linalg.norm(estimate.center - truth.center))


def rotation_error(estimate: Pose, truth: Pose) -> float:
    """Geodesic rotation error in degrees, range [0, 180]."""
    return math.degrees(truth.rotation.angle_to(estimate.rotation))


def rotation_error_arccos(estimate: Pose, truth: Pose) -> float:
    """Literal ``2 arccos |w(q^-1 q_hat)|`` form, kept as a cross-check."""
    r = truth.rotation.conjugate() * estimate.rotation
    return math.degrees(2.0 * math.acos(min(max(abs(r.w), 0.0), 1.0)))


def look_at(center, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Pose of a camera at ``center`` whose optical axis points at ``target``.

    Camera axes follow the usual computer-vision convention: x right,
    y down, z forward.
    """
    center = np.asarray(center, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - center
    z /= np.linalg.norm(z)
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    if np.linalg.norm(x) < 1e-9:
        raise ValueError("viewing direction parallel to up vector")
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.vstack([x, y, z])
    return Pose(Quaternion.from_matrix(R), center)


def skew(v) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
