#!/usr/bin/env python3
"""
File formats for the tracking toolkit
Event streams, OBJ meshes, trajectories, intrinsics and PGM debug images
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import cv2
import numpy as np
from pyquaternion import Quaternion

from config import ConfigError, parse_key_values
from core import CameraIntrinsics, Event, EventArray, Pose, TimedPose, TrackingError

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = "t,tx,ty,tz,qw,qx,qy,qz"
QUATERNION_NORM_TOLERANCE = 0.01


class DataFormatError(TrackingError, ValueError):
    """Raised for malformed input files; message names the file and line"""


@dataclass(frozen=True, eq=False)
class Mesh:
    """
    Triangle mesh in the object frame

    Args:
        vertices: (N, 3) float array, meters
        triangles: (M, 3) int array of vertex indices
    """
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(vertices) < 4 or len(triangles) < 4:
            raise DataFormatError(
                f"mesh needs at least 4 vertices and 4 triangles, got {len(vertices)} and {len(triangles)}")
        if not np.all(np.isfinite(vertices)):
            raise DataFormatError("mesh vertices must be finite")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise DataFormatError("triangle index out of range")
        vertices.flags.writeable = False
        triangles.flags.writeable = False
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @property
    def diameter(self) -> float:
        """Largest distance between two vertices"""
        diffs = self.vertices[:, None, :] - self.vertices[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(axis=2)).max())


def iter_events(path: str, width: int, height: int, microseconds: bool = False) -> Iterator[Event]:
    """
    Single-pass reader for an event file

    Args:
        path: Event file
        width, height: Sensor size used for bounds checks
        microseconds: Read the space-separated `t_us x y {0,1}` variant

    Yields:
        Event in file order

    Raises:
        DataFormatError: malformed line, out-of-bounds pixel or time going backwards
    """
    previous_t = -np.inf
    with open(path, 'r') as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if not text or text.startswith('#'):
                continue
            fields = text.split() if microseconds else text.split(',')
            if number == 1 and fields[0].strip() == 't':
                continue
            if len(fields) != 4:
                raise DataFormatError(f"{path}:{number}: expected 4 fields, got {len(fields)}")
            try:
                t = float(fields[0])
                x = int(fields[1])
                y = int(fields[2])
                polarity = int(fields[3])
            except ValueError:
                raise DataFormatError(f"{path}:{number}: unparsable event {text!r}") from None
            if microseconds:
                t *= 1e-6
                if polarity not in (0, 1):
                    raise DataFormatError(f"{path}:{number}: polarity must be 0 or 1, got {polarity}")
                polarity = 1 if polarity == 1 else -1
            elif polarity not in (1, -1):
                raise DataFormatError(f"{path}:{number}: polarity must be 1 or -1, got {polarity}")
            if not (t >= 0 and np.isfinite(t)):
                raise DataFormatError(f"{path}:{number}: invalid timestamp {fields[0]}")
            if not (0 <= x < width and 0 <= y < height):
                raise DataFormatError(f"{path}:{number}: pixel out of bounds ({x}, {y})")
            if t < previous_t:
                raise DataFormatError(f"{path}:{number}: unsorted timestamps ({t} after {previous_t})")
            previous_t = t
            yield Event(t, x, y, polarity)


def read_events(path: str, width: int, height: int, microseconds: bool = False) -> EventArray:
    """Read a whole event file into column storage (see iter_events)"""
    events = EventArray.from_events(iter_events(path, width, height, microseconds))
    logger.info(f"Read {len(events)} events from {path}")
    return events


def write_events(events: EventArray, path: str):
    with open(path, 'w') as handle:
        for t, x, y, p in zip(events.t, events.x, events.y, events.polarity):
            handle.write(f"{t:.9f},{x},{y},{p}\n")
    logger.info(f"Wrote {len(events)} events to {path}")


def read_mesh(path: str) -> Mesh:
    """
    Read the triangle subset of OBJ (`v x y z`, `f i j k`)

    Face entries may carry `/vt/vn` suffixes; only the vertex index is used.

    Raises:
        DataFormatError: non-triangle faces or indices out of range
    """
    vertices: List[List[float]] = []
    faces: List[List[int]] = []
    face_lines: List[int] = []
    with open(path, 'r') as handle:
        for number, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == 'v':
                try:
                    vertices.append([float(p) for p in parts[1:4]])
                except ValueError:
                    raise DataFormatError(f"{path}:{number}: bad vertex {line.strip()!r}") from None
                if len(vertices[-1]) != 3:
                    raise DataFormatError(f"{path}:{number}: vertex needs 3 coordinates")
            elif parts[0] == 'f':
                if len(parts) != 4:
                    raise DataFormatError(
                        f"{path}:{number}: face with {len(parts) - 1} vertices, triangulate input")
                try:
                    faces.append([int(p.split('/')[0]) - 1 for p in parts[1:]])
                except ValueError:
                    raise DataFormatError(f"{path}:{number}: bad face {line.strip()!r}") from None
                face_lines.append(number)
    for face, number in zip(faces, face_lines):
        for index in face:
            if index < 0 or index >= len(vertices):
                raise DataFormatError(
                    f"{path}:{number}: face index {index + 1} out of range (1..{len(vertices)})")
    mesh = Mesh(np.array(vertices), np.array(faces))
    logger.info(f"Read mesh with {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles from {path}")
    return mesh


def write_mesh(mesh: Mesh, path: str):
    with open(path, 'w') as handle:
        for x, y, z in mesh.vertices:
            handle.write(f"v {x:.12g} {y:.12g} {z:.12g}\n")
        for i, j, k in mesh.triangles:
            handle.write(f"f {i + 1} {j + 1} {k + 1}\n")


def read_trajectory(path: str) -> List[TimedPose]:
    """
    Read `t,tx,ty,tz,qw,qx,qy,qz` rows

    Quaternions with norm within 1 +/- 0.01 are renormalised, others rejected.

    Raises:
        DataFormatError: malformed row, bad quaternion or non-increasing time
    """
    poses: List[TimedPose] = []
    with open(path, 'r') as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if not text or text.startswith('#'):
                continue
            if number == 1 and text.startswith('t,'):
                continue
            fields = text.split(',')
            if len(fields) != 8:
                raise DataFormatError(f"{path}:{number}: expected 8 fields, got {len(fields)}")
            try:
                values = np.array([float(f) for f in fields])
            except ValueError:
                raise DataFormatError(f"{path}:{number}: unparsable row {text!r}") from None
            if not np.all(np.isfinite(values)):
                raise DataFormatError(f"{path}:{number}: non-finite value")
            norm = float(np.linalg.norm(values[4:8]))
            if abs(norm - 1.0) > QUATERNION_NORM_TOLERANCE:
                raise DataFormatError(f"{path}:{number}: quaternion norm {norm:.4f} is not unit")
            if poses and values[0] <= poses[-1].t:
                raise DataFormatError(f"{path}:{number}: non-monotone time {values[0]}")
            poses.append(TimedPose(float(values[0]), Pose(values[1:4], Quaternion(values[4:8]))))
    return poses


def write_trajectory(poses: List[TimedPose], path: str):
    with open(path, 'w') as handle:
        handle.write(TRAJECTORY_HEADER + "\n")
        for timed in poses:
            row = [timed.t] + list(timed.pose.to_array())
            handle.write(",".join(f"{value:.12g}" for value in row) + "\n")


def read_track_log(path: str) -> Tuple[int, Dict[str, float]]:
    """
    Blind-cycle count and mean per-stage milliseconds of a tracker cycles.csv

    Args:
        path: cycles.csv written with the tracker debug files

    Returns:
        (blind cycles, {stage column: mean ms}) with every `*_ms` column as a stage

    Raises:
        DataFormatError: header without a blind column or a malformed row
    """
    header: List[str] = []
    stages: List[int] = []
    blind, rows = 0, 0
    totals: Dict[str, float] = {}
    with open(path, 'r') as handle:
        for number, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            fields = text.split(',')
            if not header:
                if 'blind' not in fields:
                    raise DataFormatError(f"{path}:{number}: track log header has no 'blind' column")
                header = fields
                stages = [i for i, name in enumerate(header) if name.endswith('_ms')]
                continue
            if len(fields) != len(header):
                raise DataFormatError(f"{path}:{number}: expected {len(header)} fields, got {len(fields)}")
            try:
                blind += int(fields[header.index('blind')])
                for i in stages:
                    totals[header[i]] = totals.get(header[i], 0.0) + float(fields[i])
            except ValueError:
                raise DataFormatError(f"{path}:{number}: unparsable row {text!r}") from None
            rows += 1
    if not rows:
        return 0, {}
    return blind, {name: total / rows for name, total in totals.items()}
    logger.info(f"Wrote {len(poses)} poses to {path}")


def read_intrinsics(path: str) -> CameraIntrinsics:
    try:
        values = parse_key_values(path)
    except ConfigError as e:
        raise DataFormatError(str(e)) from None
    required = ('fx', 'fy', 'cx', 'cy', 'width', 'height')
    missing = [key for key in required if key not in values]
    if missing:
        raise DataFormatError(f"{path}: missing intrinsics keys {missing}")
    try:
        return CameraIntrinsics(
            float(values['fx']), float(values['fy']), float(values['cx']), float(values['cy']),
            int(values['width']), int(values['height']))
    except ValueError as e:
        raise DataFormatError(f"{path}: {e}") from None


def write_intrinsics(K: CameraIntrinsics, path: str):
    with open(path, 'w') as handle:
        for key in ('fx', 'fy', 'cx', 'cy', 'width', 'height'):
            handle.write(f"{key} = {getattr(K, key)}\n")


def to_gray(values: np.ndarray, low: float, high: float) -> np.ndarray:
    """Linearly map [low, high] onto 0..255"""
    scaled = (np.asarray(values, dtype=np.float64) - low) / (high - low)
    return np.clip(np.round(scaled * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path: str, values: np.ndarray, low: float, high: float):
    """Write a binary PGM image with values linearly mapped from [low, high]"""
    if not cv2.imwrite(path, to_gray(values, low, high)):
        raise DataFormatError(f"could not write image {path}")


def read_pgm(path: str) -> Optional[np.ndarray]:
    return cv2.imread(path, cv2.IMREAD_UNCHANGED)
