#!/usr/bin/env python3
"""
Trajectory evaluation
Position / rotation RMSE of an estimated trajectory against ground truth
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from core import TimedPose, TrackingError, rotation_angle_between, translation_distance
from data_io import read_track_log

logger = logging.getLogger(__name__)

TIME_EPSILON = 1e-9


class EvaluationError(TrackingError):
    """Raised when two trajectories cannot be associated"""


@dataclass
class MetricsReport:
    """Error statistics in centimeters and degrees"""
    position_rmse_cm: float
    position_std_cm: float
    rotation_rmse_deg: float
    rotation_std_deg: float
    times: np.ndarray
    position_errors_cm: np.ndarray
    rotation_errors_deg: np.ndarray
    blind_cycles: Optional[int] = None
    stage_ms: Dict[str, float] = field(default_factory=dict)

    @property
    def cycles(self) -> int:
        return len(self.times)

    def summary(self) -> str:
        lines = [
            f"cycles: {self.cycles}",
            f"e_p(sigma)(cm): {self.position_rmse_cm:.4f} ({self.position_std_cm:.4f})",
            f"e_r(sigma)(deg): {self.rotation_rmse_deg:.4f} ({self.rotation_std_deg:.4f})",
        ]
        if self.blind_cycles is not None:
            lines.append(f"blind cycles: {self.blind_cycles}")
        for stage, ms in self.stage_ms.items():
            lines.append(f"mean {stage}: {ms:.3f} ms")
        return "\n".join(lines) + "\n"


def associate(estimate: List[TimedPose], ground_truth: List[TimedPose],
              tolerance: float) -> List[Tuple[TimedPose, TimedPose]]:
    """
    Pair each estimate with the nearest ground-truth sample within tolerance

    Equidistant candidates resolve to the earlier ground-truth sample.
    """
    if not estimate or not ground_truth:
        return []
    gt_times = np.array([g.t for g in ground_truth])
    pairs = []
    for est in estimate:
        index = int(np.searchsorted(gt_times, est.t, side='left'))
        candidates = [i for i in (index - 1, index) if 0 <= i < len(gt_times)]
        best = min(candidates, key=lambda i: (abs(gt_times[i] - est.t), i))
        if abs(gt_times[best] - est.t) <= tolerance + TIME_EPSILON:
            pairs.append((est, ground_truth[best]))
    return pairs


def evaluate(estimate: List[TimedPose], ground_truth: List[TimedPose], period: float = 0.002,
             track_log: Optional[str] = None) -> MetricsReport:
    """
    Compute RMSE and standard deviation of the position and rotation errors

    Args:
        estimate: Estimated trajectory
        ground_truth: Reference trajectory
        period: Tracker period; association tolerance is half of it
        track_log: Optional cycles.csv from a tracked run for blind and timing figures

    Returns:
        MetricsReport

    Raises:
        EvaluationError: no estimate falls within tolerance of the ground truth
    """
    pairs = associate(estimate, ground_truth, 0.5 * period)
    if not pairs:
        raise EvaluationError("estimate and ground truth have no overlapping timestamps")
    if len(pairs) < len(estimate):
        logger.warning(f"{len(estimate) - len(pairs)} estimated poses have no ground truth within {0.5 * period}s")
    times = np.array([est.t for est, _ in pairs])
    position = np.array([translation_distance(est.pose, gt.pose) for est, gt in pairs]) * 100.0
    rotation = np.array([rotation_angle_between(est.pose, gt.pose) for est, gt in pairs])
    report = MetricsReport(
        position_rmse_cm=float(np.sqrt(np.mean(position ** 2))),
        position_std_cm=float(np.std(position)),
        rotation_rmse_deg=float(np.sqrt(np.mean(rotation ** 2))),
        rotation_std_deg=float(np.std(rotation)),
        times=times,
        position_errors_cm=position,
        rotation_errors_deg=rotation,
    )
    if track_log:
        report.blind_cycles, report.stage_ms = read_track_log(track_log)
    logger.info(f"Evaluated {report.cycles} cycles: e_p={report.position_rmse_cm:.3f} cm, "
                f"e_r={report.rotation_rmse_deg:.3f} deg")
    return report


def write_series(report: MetricsReport, path: str):
    """Per-cycle `t,position_error_cm,rotation_error_deg` rows for plotting"""
    with open(path, 'w') as handle:
        handle.write("t,position_error_cm,rotation_error_deg\n")
        for t, p, r in zip(report.times, report.position_errors_cm, report.rotation_errors_deg):
            handle.write(f"{t:.9g},{p:.9g},{r:.9g}\n")
    logger.info(f"Wrote {report.cycles} error rows to {path}")
