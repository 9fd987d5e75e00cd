#!/usr/bin/env python3
"""
Event-based 6D pose tracker
Runs the fixed-period loop: flow -> twist filter -> propagation -> correction -> smoothing
"""

import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from config import TrackerConfig
from core import (CameraIntrinsics, EventArray, Pose, TimedPose, Twist, left_jacobian, propagate,
                  quaternion_log, rotation_exp)
from corrector import HYPOTHESIS_COUNT, PoseCorrector
from data_io import Mesh
from eros import ErosSurface
from flow import RoiGrid
from render import DepthMap, ObjectNotVisibleError, render_depth, template_roi
from ukf import UkfSmoother
from velocity_kf import TwistFilter

logger = logging.getLogger(__name__)

# Soft per-cycle wall-time target in milliseconds
THROUGHPUT_TARGET_MS = 10.0
STAGES = ('flow', 'velocity', 'propagate', 'correct', 'smooth')

__all__ = ['propagate', 'twist_between', 'CycleRecord', 'TrackerState', 'PoseTracker', 'run',
           'run_detailed', 'write_debug_files', 'corrected_poses']


@dataclass
class CycleRecord:
    """What one tracker cycle saw and did"""
    t: float
    twist: np.ndarray
    flows: int = 0
    flows_applied: int = 0
    depth_misses: int = 0
    gated: int = 0
    scores: Optional[np.ndarray] = None
    selected: int = -1
    blind: bool = False
    corrected: Optional[Pose] = None
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def total_ms(self) -> float:
        return sum(self.timings.values())


@dataclass
class TrackerState:
    """Loop state; pose is the corrected pose the next cycle propagates from, never the smoothed one"""
    pose: Pose
    twist_filter: TwistFilter
    ukf: Optional[UkfSmoother]
    period: float
    clock: float
    eros: ErosSurface
    grid: RoiGrid
    history: List[Pose] = field(default_factory=list)
    blind: bool = False


def twist_between(a: Pose, b: Pose, dt: float) -> Twist:
    """Constant twist that propagates pose a onto pose b in dt (inverse of propagate)"""
    rotvec = quaternion_log(b.rotation * a.rotation.inverse)
    drift = b.translation - rotation_exp(rotvec) @ a.translation
    v = np.linalg.solve(left_jacobian(rotvec), drift) / dt
    return Twist(v, rotvec / dt)


class PoseTracker:
    """Owns the tracker state and advances it one period at a time"""

    def __init__(self, mesh: Mesh, K: CameraIntrinsics, initial_pose: Pose,
                 config: Optional[TrackerConfig] = None, t0: float = 0.0):
        """
        Initialize the pipeline at a known pose

        Args:
            mesh: Object mesh
            K: Camera intrinsics
            initial_pose: Pose at t0
            config: Tracker configuration, defaults when None
            t0: Stream time of the initial pose
        """
        self.mesh = mesh
        self.K = K
        self.config = config or TrackerConfig()
        c = self.config
        self.corrector = PoseCorrector.from_config(c)
        ukf = UkfSmoother.from_config(c, initial_pose) if c.ukf_enabled else None
        self.state = TrackerState(
            pose=initial_pose,
            twist_filter=TwistFilter.from_config(c),
            ukf=ukf,
            period=c.period,
            clock=t0,
            eros=ErosSurface(K.width, K.height, c.eros_kernel, c.eros_lambda),
            grid=RoiGrid.from_config(c, K.width, K.height),
            history=[initial_pose],
        )
        self.blind_cycles = 0

    def _depth_map(self, pose: Pose) -> Optional[DepthMap]:
        try:
            margin = self.config.depth_search_radius + 1
            roi = template_roi(self.mesh, pose, self.K, 0.0, margin).clipped(self.K)
        except ObjectNotVisibleError:
            return None
        if roi.is_empty():
            return None
        return render_depth(self.mesh, pose, self.K, roi)

    def _estimate_twist(self, flows, record: CycleRecord) -> Twist:
        s, mode = self.state, self.config.tracker_mode
        if mode == 'correction_only':
            return Twist()
        if mode == 'pose_difference':
            if len(s.history) < 2:
                return Twist()
            return twist_between(s.history[-2], s.history[-1], s.period)
        s.twist_filter.predict()
        depth_map = self._depth_map(s.pose) if flows else None
        if depth_map is not None:
            radius = self.config.depth_search_radius
            stats = s.twist_filter.update_flows(flows, lambda u, v: depth_map.lookup(u, v, radius),
                                                self.K, s.period)
        else:
            stats = s.twist_filter.update_flows(flows, lambda u, v: None, self.K, s.period)
        record.flows_applied, record.depth_misses, record.gated = stats.applied, stats.depth_misses, stats.gated
        return s.twist_filter.twist

    def step(self, events: EventArray, t: float) -> Tuple[TimedPose, CycleRecord]:
        """
        One tracker cycle ending at stream time t

        Args:
            events: Events of the cycle, (previous clock, t]
            t: Cycle end time

        Returns:
            (emitted pose, cycle record)
        """
        s = self.state
        if t < s.clock:
            raise ValueError(f"tracker clock cannot go backwards ({t} < {s.clock})")
        timings = {}

        started = time.perf_counter()
        s.eros.update_batch(events)
        flows = s.grid.step(events, t)
        timings['flow'] = (time.perf_counter() - started) * 1e3

        record = CycleRecord(t, np.zeros(6), flows=len(flows))
        started = time.perf_counter()
        twist = self._estimate_twist(flows, record)
        record.twist = twist.as_vector()
        timings['velocity'] = (time.perf_counter() - started) * 1e3

        started = time.perf_counter()
        propagated = propagate(s.pose, twist, s.period)
        timings['propagate'] = (time.perf_counter() - started) * 1e3

        started = time.perf_counter()
        if self.config.tracker_mode == 'velocity_only':
            corrected = propagated
            depth_map = self._depth_map(propagated)
            blind = depth_map is None or depth_map.is_empty()
        else:
            result = self.corrector.correct(propagated, s.eros, self.mesh, self.K)
            corrected, blind = result.pose, result.skipped
            if result.hypotheses is not None and not result.skipped:
                record.scores = result.hypotheses.scores.copy()
                record.selected = result.hypotheses.selected
        timings['correct'] = (time.perf_counter() - started) * 1e3

        started = time.perf_counter()
        # the smoother only shapes the output, the loop continues from the corrected pose
        pose = propagated if blind else corrected
        if s.ukf is None:
            emitted = pose
        elif blind:
            s.ukf.reset(pose)
            emitted = pose
        else:
            emitted = s.ukf.smooth(pose, twist, s.period)
        timings['smooth'] = (time.perf_counter() - started) * 1e3

        if blind:
            self.blind_cycles += 1
            if not s.blind:
                logger.warning(f"Object not visible at t={t:.4f}s, continuing on propagation only")
        elif s.blind:
            logger.info(f"Object visible again at t={t:.4f}s")
        s.blind = blind
        record.blind = blind
        record.corrected = pose
        record.timings = timings
        s.pose = pose
        s.clock = t
        s.history = (s.history + [pose])[-2:]
        return TimedPose(t, emitted), record

    def run(self, events: EventArray, end_time: Optional[float] = None) -> Tuple[List[TimedPose], List[CycleRecord]]:
        """
        Track through a whole stream on the t0 + k * period lattice

        Args:
            events: Time-sorted event stream
            end_time: Last time to cover, defaults to the last event time

        Returns:
            (poses including the initial one at t0, one CycleRecord per cycle)
        """
        if not events.is_sorted():
            raise ValueError("event stream must be sorted by time")
        t0, period = self.state.clock, self.state.period
        if end_time is None:
            end_time = float(events.t[-1]) if len(events) else t0
        cycles = max(0, int(math.ceil((end_time - t0) / period - 1e-9)))
        skipped = int(np.searchsorted(events.t, t0, side='right'))
        if skipped:
            logger.warning(f"Ignoring {skipped} events at or before the initial pose time {t0}")

        poses = [TimedPose(t0, self.state.pose)]
        records = []
        previous = t0
        for k in range(1, cycles + 1):
            t = t0 + k * period
            timed, record = self.step(events.between(previous, t), t)
            poses.append(timed)
            records.append(record)
            previous = t
        _log_summary(records, self.blind_cycles)
        ukf = self.state.ukf
        if ukf is not None and ukf.rejected_total:
            logger.info(f"UKF rejected {ukf.rejected_total} measurements, {ukf.reinitializations} restarts")
        return poses, records


def corrected_poses(records: List[CycleRecord]) -> List[TimedPose]:
    """The pose the loop continued from at every cycle, before smoothing"""
    return [TimedPose(r.t, r.corrected) for r in records if r.corrected is not None]


def _log_summary(records: List[CycleRecord], blind_cycles: int):
    if not records:
        return
    mean_ms = float(np.mean([r.total_ms for r in records]))
    logger.info(f"Tracked {len(records)} cycles, {blind_cycles} blind, mean cycle time {mean_ms:.2f} ms")
    if mean_ms > THROUGHPUT_TARGET_MS:
        logger.warning(f"Mean cycle time {mean_ms:.2f} ms is above the {THROUGHPUT_TARGET_MS:.0f} ms target")


def run_detailed(events: EventArray, mesh: Mesh, K: CameraIntrinsics, initial_pose: Pose,
                 config: Optional[TrackerConfig] = None, t0: float = 0.0,
                 end_time: Optional[float] = None) -> Tuple[List[TimedPose], List[CycleRecord]]:
    tracker = PoseTracker(mesh, K, initial_pose, config, t0)
    return tracker.run(events, end_time)


def run(events: EventArray, mesh: Mesh, K: CameraIntrinsics, initial_pose: Pose,
        config: Optional[TrackerConfig] = None, t0: float = 0.0,
        end_time: Optional[float] = None) -> List[TimedPose]:
    """
    Track an object through an event stream

    Args:
        events: Time-sorted events
        mesh: Object mesh
        K: Camera intrinsics
        initial_pose: Pose at t0
        config: Tracker configuration
        t0: Time of the initial pose
        end_time: Last time to cover, defaults to the last event time

    Returns:
        One TimedPose per period, starting with the initial pose at t0
    """
    poses, _ = run_detailed(events, mesh, K, initial_pose, config, t0, end_time)
    return poses


def write_debug_files(records: List[CycleRecord], directory: str):
    """Write twist.csv, scores.csv and cycles.csv for a tracked run"""
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, 'twist.csv'), 'w') as handle:
        handle.write("t,vx,vy,vz,wx,wy,wz\n")
        for r in records:
            handle.write(",".join(f"{value:.9g}" for value in [r.t, *r.twist]) + "\n")
    with open(os.path.join(directory, 'scores.csv'), 'w') as handle:
        handle.write("t,selected," + ",".join(f"s{i}" for i in range(HYPOTHESIS_COUNT)) + "\n")
        for r in records:
            scores = r.scores if r.scores is not None else np.full(HYPOTHESIS_COUNT, np.nan)
            handle.write(f"{r.t:.9g},{r.selected}," + ",".join(f"{s:.9g}" for s in scores) + "\n")
    with open(os.path.join(directory, 'cycles.csv'), 'w') as handle:
        handle.write("t,flows,applied,depth_misses,gated,selected,blind,"
                     + ",".join(f"{stage}_ms" for stage in STAGES) + ",total_ms\n")
        for r in records:
            timings = ",".join(f"{r.timings.get(stage, 0.0):.4f}" for stage in STAGES)
            handle.write(f"{r.t:.9g},{r.flows},{r.flows_applied},{r.depth_misses},{r.gated},"
                         f"{r.selected},{int(r.blind)},{timings},{r.total_ms:.4f}\n")
    logger.info(f"Wrote per-cycle debug files for {len(records)} cycles to {directory}")
