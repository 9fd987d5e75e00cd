#!/usr/bin/env python3
"""
Core types for event-based 6D object pose tracking
Shared domain types, pinhole camera model and pose/twist algebra
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np
from pyquaternion import Quaternion
from scipy.spatial.transform import Rotation

logger = logging.getLogger(__name__)

# Below this rotation angle (rad) the closed-form integrators switch to series
SMALL_ANGLE = 1e-8


class TrackingError(Exception):
    """Base class for every error raised by the tracking toolkit"""


class BehindCameraError(TrackingError, ValueError):
    """Raised when a point with non-positive depth is projected"""


def _frozen_vector(values, size: int) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(size)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class Event:
    """One brightness-change detection"""
    t: float
    x: int
    y: int
    polarity: int


@dataclass(frozen=True, eq=False)
class EventArray:
    """
    Column storage for an event stream

    Args:
        t: Timestamps in seconds (sorted, non-decreasing)
        x: Pixel columns
        y: Pixel rows
        polarity: +1 / -1 per event
    """
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64))
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.int64))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64))
        object.__setattr__(self, "polarity", np.asarray(self.polarity, dtype=np.int8))
        if not (len(self.t) == len(self.x) == len(self.y) == len(self.polarity)):
            raise ValueError("event columns must have equal length")

    @classmethod
    def empty(cls) -> "EventArray":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def from_events(cls, events: Sequence[Event]) -> "EventArray":
        events = list(events)
        if not events:
            return cls.empty()
        return cls(
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.polarity for e in events],
        )

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t, self.x, self.y, self.polarity):
            yield Event(float(t), int(x), int(y), int(p))

    def between(self, t_start: float, t_end: float) -> "EventArray":
        """Events with t_start < t <= t_end (stream must be sorted)"""
        lo = np.searchsorted(self.t, t_start, side="right")
        hi = np.searchsorted(self.t, t_end, side="right")
        return self.select(slice(lo, hi))

    def select(self, index) -> "EventArray":
        return EventArray(self.t[index], self.x[index], self.y[index], self.polarity[index])

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.t) >= 0))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics in pixels"""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside sensor {self.width}x{self.height}")

    def contains(self, x, y):
        """True where integer pixel (x, y) lies on the sensor"""
        return (x >= 0) & (x < self.width) & (y >= 0) & (y < self.height)


@dataclass(frozen=True, eq=False)
class Pose:
    """
    Rigid transform object -> camera

    Args:
        translation: Object origin in the camera frame (meters)
        rotation: Unit quaternion (w, x, y, z); normalised on construction
    """
    translation: np.ndarray
    rotation: Quaternion

    def __post_init__(self):
        object.__setattr__(self, "translation", _frozen_vector(self.translation, 3))
        rotation = self.rotation
        if not isinstance(rotation, Quaternion):
            rotation = Quaternion(np.asarray(rotation, dtype=np.float64))
        object.__setattr__(self, "rotation", rotation.normalised)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), Quaternion(1.0, 0.0, 0.0, 0.0))

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Pose":
        """Build from [tx, ty, tz, qw, qx, qy, qz]"""
        values = np.asarray(values, dtype=np.float64)
        return cls(values[:3], Quaternion(values[3:7]))

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation.q])

    @property
    def rotation_matrix(self) -> np.ndarray:
        return self.rotation.rotation_matrix

    def transform_points(self, points: np.ndarray) -> np.ndarray:
        """Map object-frame points (N, 3) into the camera frame"""
        return np.asarray(points, dtype=np.float64) @ self.rotation_matrix.T + self.translation

    def __repr__(self) -> str:
        t = ", ".join(f"{v:.6f}" for v in self.translation)
        q = ", ".join(f"{v:.6f}" for v in self.rotation.q)
        return f"Pose(t=[{t}], q=[{q}])"


@dataclass(frozen=True, eq=False)
class Twist:
    """
    6D object velocity at the camera origin

    v is the velocity of the point coinciding with the camera origin and
    moving rigidly with the object; omega is the angular velocity. Both are
    expressed in the camera frame, so any object point p moves with
    p_dot = v + omega x p.
    """
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "v", _frozen_vector(self.v, 3))
        object.__setattr__(self, "omega", _frozen_vector(self.omega, 3))
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.omega))):
            raise ValueError("twist components must be finite")

    @classmethod
    def from_vector(cls, vector: Sequence[float]) -> "Twist":
        vector = np.asarray(vector, dtype=np.float64)
        return cls(vector[:3], vector[3:6])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.v, self.omega])

    def point_velocity(self, point: np.ndarray) -> np.ndarray:
        """Velocity of a camera-frame point rigidly attached to the object"""
        return self.v + np.cross(self.omega, point)


@dataclass(frozen=True)
class TimedPose:
    t: float
    pose: Pose


@dataclass(frozen=True)
class Roi:
    """Axis-aligned pixel window [x0, x0 + width) x [y0, y0 + height)"""
    x0: int
    y0: int
    width: int
    height: int

    @classmethod
    def from_center(cls, center: Tuple[int, int],
                    half_extent: Union[int, Tuple[int, int]]) -> "Roi":
        if np.isscalar(half_extent):
            hx = hy = int(half_extent)
        else:
            hx, hy = (int(h) for h in half_extent)
        cx, cy = (int(c) for c in center)
        return cls(cx - hx, cy - hy, 2 * hx + 1, 2 * hy + 1)

    @property
    def x1(self) -> int:
        return self.x0 + self.width

    @property
    def y1(self) -> int:
        return self.y0 + self.height

    def shifted(self, dx: int, dy: int) -> "Roi":
        return Roi(self.x0 + dx, self.y0 + dy, self.width, self.height)

    def clipped(self, K: CameraIntrinsics) -> "Roi":
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, K.width), min(self.y1, K.height)
        return Roi(x0, y0, max(x1 - x0, 0), max(y1 - y0, 0))

    def is_empty(self) -> bool:
        return self.width <= 0 or self.height <= 0


def project(point: Sequence[float], K: CameraIntrinsics) -> Tuple[float, float]:
    """
    Pinhole projection of a camera-frame point

    Args:
        point: (x, y, z) in meters
        K: Camera intrinsics

    Returns:
        (u, v) pixel coordinates

    Raises:
        BehindCameraError: if z <= 0
    """
    x, y, z = (float(c) for c in point)
    if z <= 0:
        raise BehindCameraError(f"point {tuple(point)} is behind the camera (z={z})")
    return K.fx * x / z + K.cx, K.fy * y / z + K.cy


def project_points(points: np.ndarray, K: CameraIntrinsics) -> np.ndarray:
    """Vectorised projection of (N, 3) points with positive depth"""
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    if np.any(z <= 0):
        raise BehindCameraError("at least one point is behind the camera")
    return np.stack([K.fx * points[:, 0] / z + K.cx, K.fy * points[:, 1] / z + K.cy], axis=1)


def unproject(u: float, v: float, z: float, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point imaged at (u, v) with depth z"""
    if z <= 0:
        raise BehindCameraError(f"depth must be positive, got {z}")
    return np.array([(u - K.cx) * z / K.fx, (v - K.cy) * z / K.fy, z])


def inverse(pose: Pose) -> Pose:
    rotation = pose.rotation.inverse
    return Pose(-(rotation.rotation_matrix @ pose.translation), rotation)


def compose(a: Pose, b: Pose) -> Pose:
    """a * b: apply b first, then a"""
    translation = a.rotation_matrix @ b.translation + a.translation
    return Pose(translation, a.rotation * b.rotation)


def rotation_angle_between(a: Pose, b: Pose) -> float:
    """Angle in degrees of the relative rotation a^-1 b, in [0, 180]"""
    relative = (a.rotation.inverse * b.rotation).q
    angle = 2.0 * math.atan2(float(np.linalg.norm(relative[1:])), abs(float(relative[0])))
    return math.degrees(angle)


def translation_distance(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(a.translation - b.translation))


def skew(vector: Sequence[float]) -> np.ndarray:
    x, y, z = vector
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def quaternion_exp(rotvec: Sequence[float]) -> Quaternion:
    """Unit quaternion of a rotation vector (axis * angle)"""
    x, y, z, w = Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_quat()
    return Quaternion(w, x, y, z)


def quaternion_log(q: Quaternion) -> np.ndarray:
    """Rotation vector of a unit quaternion, angle in [0, pi]"""
    w, x, y, z = q.q
    return Rotation.from_quat([x, y, z, w]).as_rotvec()


def rotation_exp(rotvec: Sequence[float]) -> np.ndarray:
    """Rotation matrix of a rotation vector"""
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def left_jacobian(rotvec: Sequence[float]) -> np.ndarray:
    """SO(3) left Jacobian: integral of exp(s * rotvec) for s in [0, 1]"""
    rotvec = np.asarray(rotvec, dtype=np.float64)
    angle = float(np.linalg.norm(rotvec))
    S = skew(rotvec)
    if angle < SMALL_ANGLE:
        return np.eye(3) + 0.5 * S
    return (np.eye(3) + (1.0 - math.cos(angle)) / angle ** 2 * S
            + (angle - math.sin(angle)) / angle ** 3 * (S @ S))


def omega_matrix(omega: Sequence[float]) -> np.ndarray:
    """4x4 matrix with omega_matrix(w) @ q == (0, w) * q for q = (w, x, y, z)"""
    wx, wy, wz = omega
    return np.array([
        [0.0, -wx, -wy, -wz],
        [wx, 0.0, -wz, wy],
        [wy, wz, 0.0, -wx],
        [wz, -wy, wx, 0.0],
    ])


def propagate(pose: Pose, twist: Twist, dt: float) -> Pose:
    """
    Advance a pose by a constant twist over dt

    The rotation follows q <- [cos(|w| dt / 2) I + sin(|w| dt / 2) / |w| Omega(w)] q,
    switching to the first-order update below SMALL_ANGLE. The translation
    integrates t_dot = v + w x t exactly, which is t + v dt when w = 0.

    Args:
        pose: Current pose
        twist: Object twist at the camera origin
        dt: Step in seconds, > 0

    Returns:
        Propagated pose with a renormalised quaternion
    """
    if dt <= 0:
        raise ValueError(f"propagation step must be positive, got {dt}")
    omega = twist.omega
    rate = float(np.linalg.norm(omega))
    Omega = omega_matrix(omega)
    q = pose.rotation.q
    if rate * dt < SMALL_ANGLE:
        rotated = q + 0.5 * dt * (Omega @ q)
    else:
        half = 0.5 * rate * dt
        rotated = (math.cos(half) * np.eye(4) + math.sin(half) / rate * Omega) @ q
    rotated /= np.linalg.norm(rotated)
    step = omega * dt
    translation = rotation_exp(step) @ pose.translation + left_jacobian(step) @ twist.v * dt
    return Pose(translation, Quaternion(rotated))


def mean_reprojection_offset(a: Pose, b: Pose, points: np.ndarray, K: CameraIntrinsics) -> float:
    """Mean pixel distance between the projections of object points under two poses"""
    pa = project_points(a.transform_points(points), K)
    pb = project_points(b.transform_points(points), K)
    return float(np.mean(np.linalg.norm(pa - pb, axis=1)))


def poses_to_array(poses: List[TimedPose]) -> np.ndarray:
    """(N, 8) array of [t, tx, ty, tz, qw, qx, qy, qz] rows"""
    if not poses:
        return np.zeros((0, 8))
    return np.array([np.concatenate([[p.t], p.pose.to_array()]) for p in poses])
