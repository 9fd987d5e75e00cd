#!/usr/bin/env python3
"""
Synthetic event camera
Edge-toggle event generation from a mesh moving along a trajectory, with ground truth
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pyquaternion import Quaternion

from core import CameraIntrinsics, EventArray, Pose, TimedPose, TrackingError, quaternion_exp
from data_io import Mesh
from render import ObjectNotVisibleError, render_edges, template_roi

logger = logging.getLogger(__name__)

DEFAULT_INTRINSICS = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
SCENES = ('translate', 'spin', 'screw')
# Below this fraction of visible frames a warning is logged
MIN_VISIBLE_FRACTION = 0.9
# Camera-frame offset of the scene cube from the optical axis, meters
SCENE_OFFSET_X = 0.05
SCENE_OFFSET_Y = 0.04


class SimulationError(TrackingError):
    """Raised when a scene cannot produce events (bad trajectory, object never visible)"""


@dataclass(frozen=True)
class SimConfig:
    """
    Simulator settings

    Args:
        dt: Frame step in seconds
        noise_rate: Background noise events per second over the whole sensor
        jitter: Std of Gaussian timestamp jitter in seconds
        seed: Random seed
        gt_rate: Ground-truth sampling rate in Hz
        crease_angle_deg: Face angle that counts as an edge
        depth_jump: Depth step in meters that counts as an edge
    """
    dt: float = 0.0005
    noise_rate: float = 0.0
    jitter: float = 0.0
    seed: int = 0
    gt_rate: float = 500.0
    crease_angle_deg: float = 30.0
    depth_jump: float = 0.01

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError(f"frame step must be positive, got {self.dt}")
        if self.noise_rate < 0:
            raise ValueError(f"noise rate must be non-negative, got {self.noise_rate}")
        if self.jitter < 0:
            raise ValueError(f"jitter must be non-negative, got {self.jitter}")


def interpolate_pose(trajectory: List[TimedPose], t: float) -> Pose:
    """
    Pose at time t: linear in translation, slerp in rotation

    Raises:
        SimulationError: t outside the trajectory span
    """
    times = np.array([p.t for p in trajectory])
    if not len(times) or t < times[0] or t > times[-1]:
        span = f"[{times[0]}, {times[-1]}]" if len(times) else "empty"
        raise SimulationError(f"time {t} outside trajectory span {span}")
    index = int(np.searchsorted(times, t, side='left'))
    if times[index] == t:
        return trajectory[index].pose
    a, b = trajectory[index - 1], trajectory[index]
    s = (t - a.t) / (b.t - a.t)
    translation = (1.0 - s) * a.pose.translation + s * b.pose.translation
    rotation = Quaternion.slerp(a.pose.rotation, b.pose.rotation, s)
    return Pose(translation, rotation)


def edge_pixels(mesh: Mesh, pose: Pose, K: CameraIntrinsics, crease_angle_deg: float = 30.0,
                depth_jump: float = 0.01) -> np.ndarray:
    """Flat indices y * width + x of the rendered edge pixels, ascending"""
    try:
        roi = template_roi(mesh, pose, K, 0.0, 2).clipped(K)
    except ObjectNotVisibleError:
        return np.zeros(0, dtype=np.int64)
    if roi.is_empty():
        return np.zeros(0, dtype=np.int64)
    rows, cols = np.nonzero(render_edges(mesh, pose, K, roi, crease_angle_deg, depth_jump))
    return (rows + roi.y0).astype(np.int64) * K.width + (cols + roi.x0)


def edge_events(mesh: Mesh, pose: Pose, K: CameraIntrinsics, t: float, crease_angle_deg: float = 30.0,
                depth_jump: float = 0.01) -> EventArray:
    """One positive event per edge pixel of a static pose, all at time t"""
    flat = edge_pixels(mesh, pose, K, crease_angle_deg, depth_jump)
    return EventArray(np.full(len(flat), float(t)), flat % K.width, flat // K.width, np.ones(len(flat)))


def simulate(mesh: Mesh, trajectory: List[TimedPose], K: CameraIntrinsics,
             sim_config: SimConfig = SimConfig()) -> Tuple[EventArray, List[TimedPose]]:
    """
    Generate events and ground truth for a mesh following a trajectory

    Each frame step renders the edge mask; pixels entering the mask fire +1,
    pixels leaving it fire -1, with timestamps drawn inside the step.

    Args:
        mesh: Object mesh
        trajectory: Time-increasing poses covering the simulated span
        K: Camera intrinsics
        sim_config: Simulator settings

    Returns:
        (time-sorted events, ground truth sampled at gt_rate)

    Raises:
        SimulationError: bad trajectory or object never visible
    """
    if len(trajectory) < 2:
        raise SimulationError("trajectory needs at least two poses")
    times = np.array([p.t for p in trajectory])
    if np.any(np.diff(times) <= 0):
        raise SimulationError("trajectory times must be strictly increasing")
    t_start, t_end = float(times[0]), float(times[-1])
    dt = sim_config.dt
    rng = np.random.default_rng(sim_config.seed)
    steps = int(math.floor((t_end - t_start) / dt + 1e-9))

    chunks = []
    previous = edge_pixels(mesh, trajectory[0].pose, K, sim_config.crease_angle_deg, sim_config.depth_jump)
    visible = int(len(previous) > 0)
    for i in range(1, steps + 1):
        t_frame = min(t_start + i * dt, t_end)
        t_previous = t_start + (i - 1) * dt
        current = edge_pixels(mesh, interpolate_pose(trajectory, t_frame), K,
                              sim_config.crease_angle_deg, sim_config.depth_jump)
        visible += int(len(current) > 0)
        entering = np.setdiff1d(current, previous, assume_unique=True)
        leaving = np.setdiff1d(previous, current, assume_unique=True)
        flat = np.concatenate([entering, leaving])
        if len(flat):
            polarity = np.concatenate([np.ones(len(entering)), -np.ones(len(leaving))])
            t = t_frame - rng.random(len(flat)) * (t_frame - t_previous)
            if sim_config.jitter > 0:
                t = np.clip(t + rng.normal(0.0, sim_config.jitter, len(flat)), t_previous, t_frame)
            chunks.append((t, flat % K.width, flat // K.width, polarity))
        previous = current

    if visible == 0:
        raise SimulationError("object is never visible along the trajectory")
    if visible < MIN_VISIBLE_FRACTION * (steps + 1):
        logger.warning(f"Object visible in only {visible}/{steps + 1} frames")

    count = rng.poisson(sim_config.noise_rate * (t_end - t_start)) if sim_config.noise_rate > 0 else 0
    if count:
        chunks.append((rng.uniform(t_start, t_end, count), rng.integers(0, K.width, count),
                       rng.integers(0, K.height, count), rng.choice([-1, 1], count)))

    if chunks:
        t, x, y, p = (np.concatenate(column) for column in zip(*chunks))
        order = np.argsort(t, kind='stable')
        events = EventArray(t[order], x[order], y[order], p[order])
    else:
        events = EventArray.empty()

    samples = int(math.floor((t_end - t_start) * sim_config.gt_rate + 1e-9))
    ground_truth = [TimedPose(t_start + k / sim_config.gt_rate,
                              interpolate_pose(trajectory, min(t_start + k / sim_config.gt_rate, t_end)))
                    for k in range(samples + 1)]
    logger.info(f"Simulated {len(events)} events ({count} noise) over {t_end - t_start:.3f}s, "
                f"{len(ground_truth)} ground-truth poses")
    return events, ground_truth


def cube_mesh(side: float = 0.1) -> Mesh:
    """Axis-aligned cube centred on the object origin, 8 vertices and 12 triangles"""
    h = 0.5 * side
    vertices = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    triangles = [tri for a, b, c, d in quads for tri in ((a, b, c), (a, c, d))]
    return Mesh(vertices, np.array(triangles))


def plane_mesh(width: float, height: float) -> Mesh:
    """Flat rectangle in the object x-y plane, fanned around a centre vertex"""
    w, h = 0.5 * width, 0.5 * height
    vertices = np.array([[0.0, 0.0, 0.0], [-w, -h, 0.0], [w, -h, 0.0], [w, h, 0.0], [-w, h, 0.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 4], [0, 4, 1]])
    return Mesh(vertices, triangles)


def _sample_times(duration: float, rate: float) -> np.ndarray:
    count = int(math.ceil(duration * rate - 1e-9))
    return np.linspace(0.0, duration, count + 1)


def linear_trajectory(start: Pose, velocity, duration: float, rate: float = 1000.0,
                      t0: float = 0.0) -> List[TimedPose]:
    """Constant velocity translation, fixed orientation"""
    velocity = np.asarray(velocity, dtype=np.float64)
    return [TimedPose(t0 + s, Pose(start.translation + velocity * s, start.rotation))
            for s in _sample_times(duration, rate)]


def screw_trajectory(start: Pose, velocity, axis, rate_deg: float, duration: float,
                     rate: float = 1000.0, t0: float = 0.0) -> List[TimedPose]:
    """Object origin translating at velocity while the object spins about its origin (camera-frame axis)"""
    velocity = np.asarray(velocity, dtype=np.float64)
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    omega = math.radians(rate_deg) * axis
    return [TimedPose(t0 + s, Pose(start.translation + velocity * s, quaternion_exp(omega * s) * start.rotation))
            for s in _sample_times(duration, rate)]


def spin_trajectory(start: Pose, axis, rate_deg: float, duration: float, rate: float = 1000.0,
                    t0: float = 0.0) -> List[TimedPose]:
    return screw_trajectory(start, np.zeros(3), axis, rate_deg, duration, rate, t0)


def build_scene(name: str, duration: float = 2.0, side: float = 0.1,
                depth: float = 0.5) -> Tuple[Mesh, List[TimedPose], CameraIntrinsics]:
    """
    Desk-scale cube scenes

    The cube sits below the optical axis so its centre never projects onto
    the principal point, where depth hypotheses degenerate.

    Args:
        name: 'translate' (0.2 m/s along x), 'spin' (180 deg/s) or 'screw' (0.1 m/s with 90 deg/s)
        duration: Length in seconds
        side: Cube side in meters
        depth: Distance of the cube centre from the camera

    Returns:
        (mesh, trajectory, intrinsics)
    """
    tilt = Quaternion(axis=[1.0, 0.0, 0.0], angle=math.radians(20.0))
    if name == 'translate':
        start = Pose([-0.1 * duration, SCENE_OFFSET_Y, depth], tilt)
        trajectory = linear_trajectory(start, [0.2, 0.0, 0.0], duration)
    elif name == 'spin':
        start = Pose([SCENE_OFFSET_X, SCENE_OFFSET_Y, depth], tilt)
        trajectory = spin_trajectory(start, [0.0, 1.0, 0.0], 180.0, duration)
    elif name == 'screw':
        start = Pose([-0.05 * duration, SCENE_OFFSET_Y, depth], tilt)
        trajectory = screw_trajectory(start, [0.1, 0.0, 0.0], [0.0, 1.0, 0.0], 90.0, duration)
    else:
        raise ValueError(f"unknown scene {name!r}, expected one of {SCENES}")
    return cube_mesh(side), trajectory, DEFAULT_INTRINSICS
