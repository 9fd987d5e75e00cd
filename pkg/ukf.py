#!/usr/bin/env python3
"""
Unscented pose smoother
UKF over [position, rotation-vector offset] anchored at a reference quaternion
"""

import logging
import math
from typing import Optional

import numpy as np
from filterpy.kalman import MerweScaledSigmaPoints, UnscentedKalmanFilter

from core import Pose, Twist, propagate, quaternion_exp, quaternion_log

logger = logging.getLogger(__name__)


class UkfSmoother:
    """
    Smooths corrected poses with a constant-twist or random-walk process model

    The state is x = [p, d] where the pose it stands for is
    (p, exp(d) * q_ref). After each update the rotation offset is folded back
    into q_ref so d stays near zero.
    """

    def __init__(self, initial_pose: Pose, alpha: float = 1e-3, beta: float = 2.0, kappa: float = 0.0,
                 q_pos: float = 0.0005, q_rot_deg: float = 0.2, r_pos: float = 0.001,
                 r_rot_deg: float = 0.5, init_pos_std: float = 0.005, init_rot_deg: float = 2.0,
                 process_model: str = 'twist', dt: float = 0.002, gate: float = 22.46,
                 max_rejections: int = 3):
        """
        Initialize at a pose

        Args:
            initial_pose: Starting mean
            alpha, beta, kappa: Unscented transform parameters
            q_pos, q_rot_deg: Process noise std per cycle (meters, degrees)
            r_pos, r_rot_deg: Measurement noise std (meters, degrees)
            init_pos_std, init_rot_deg: Initial std, also used when re-initialising
            process_model: 'twist' or 'random_walk'
            dt: Default cycle period
            gate: Squared Mahalanobis distance above which a measurement is rejected
                (chi-square, 6 dof, 99.9% by default); 0 disables gating
            max_rejections: Consecutive rejections after which the filter restarts at the measurement
        """
        if process_model not in ('twist', 'random_walk'):
            raise ValueError(f"unknown process model {process_model!r}")
        self.process_model = process_model
        self.initial_covariance = np.diag([init_pos_std ** 2] * 3 + [math.radians(init_rot_deg) ** 2] * 3)
        points = MerweScaledSigmaPoints(6, alpha=alpha, beta=beta, kappa=kappa)
        self.ukf = UnscentedKalmanFilter(dim_x=6, dim_z=6, dt=dt, hx=self._measure,
                                         fx=self._advance, points=points)
        self.ukf.Q = np.diag([q_pos ** 2] * 3 + [math.radians(q_rot_deg) ** 2] * 3)
        self.ukf.R = np.diag([r_pos ** 2] * 3 + [math.radians(r_rot_deg) ** 2] * 3)
        self.gate = gate
        self.max_rejections = max_rejections
        self.rejections = 0
        self.rejected_total = 0
        self.reinitializations = 0
        self.reset(initial_pose)

    @classmethod
    def from_config(cls, config, initial_pose: Pose) -> "UkfSmoother":
        return cls(initial_pose, config.ukf_alpha, config.ukf_beta, config.ukf_kappa, config.ukf_q_pos,
                   config.ukf_q_rot_deg, config.ukf_r_pos, config.ukf_r_rot_deg, config.ukf_init_pos_std,
                   config.ukf_init_rot_deg, config.ukf_process_model, config.period, config.ukf_gate,
                   config.ukf_max_rejections)

    def reset(self, pose: Pose):
        self.reference = pose.rotation
        self.rejections = 0
        self.ukf.x = np.concatenate([pose.translation, np.zeros(3)])
        self.ukf.P = self.initial_covariance.copy()

    @property
    def pose(self) -> Pose:
        return self._pose_of(self.ukf.x)

    @property
    def covariance(self) -> np.ndarray:
        return self.ukf.P.copy()

    def _pose_of(self, x: np.ndarray) -> Pose:
        return Pose(x[:3], quaternion_exp(x[3:]) * self.reference)

    def _chart(self, pose: Pose) -> np.ndarray:
        return np.concatenate([pose.translation, quaternion_log(pose.rotation * self.reference.inverse)])

    def _advance(self, x: np.ndarray, dt: float, twist: Optional[Twist] = None) -> np.ndarray:
        if twist is None or self.process_model == 'random_walk':
            return np.array(x, dtype=np.float64)
        return self._chart(propagate(self._pose_of(x), twist, dt))

    @staticmethod
    def _measure(x: np.ndarray) -> np.ndarray:
        return np.array(x, dtype=np.float64)

    def innovation_distance(self, measurement: Pose) -> float:
        """Squared Mahalanobis distance of a measurement from the current mean (measurement model is identity)"""
        y = self._chart(measurement) - self.ukf.x
        return float(y @ np.linalg.solve(self.ukf.P + self.ukf.R, y))

    def smooth(self, corrected_pose: Pose, twist: Optional[Twist] = None, dt: Optional[float] = None) -> Pose:
        """
        Predict with the process model, then update with the corrected pose

        A measurement whose innovation distance exceeds the gate is dropped and
        the prediction is returned; after max_rejections drops in a row the
        filter restarts at the measurement.

        Args:
            corrected_pose: Measurement
            twist: Current filtered twist (ignored by the random-walk model)
            dt: Cycle period, defaults to the constructor value

        Returns:
            Posterior mean pose; the measurement itself if the filter had to be re-initialised
        """
        try:
            self.ukf.predict(dt=dt, twist=twist)
            if self.gate > 0 and self.innovation_distance(corrected_pose) > self.gate:
                return self._reject(corrected_pose)
            self.ukf.update(self._chart(corrected_pose))
            self.ukf.P = 0.5 * (self.ukf.P + self.ukf.P.T)
            np.linalg.cholesky(self.ukf.P)
        except np.linalg.LinAlgError:
            self.reinitializations += 1
            logger.warning("UKF covariance lost positive-definiteness, re-initialising at the measurement")
            self.reset(corrected_pose)
            return corrected_pose
        self.rejections = 0
        self._reanchor()
        return self.pose

    def _reject(self, measurement: Pose) -> Pose:
        self.rejections += 1
        self.rejected_total += 1
        if self.rejections >= self.max_rejections:
            self.reinitializations += 1
            logger.warning(f"UKF rejected {self.rejections} measurements in a row, re-initialising at the measurement")
            self.reset(measurement)
            return measurement
        logger.debug(f"UKF measurement rejected ({self.rejections} in a row)")
        self._reanchor()
        return self.pose

    def _reanchor(self):
        x = np.array(self.ukf.x, dtype=np.float64)
        self.reference = (quaternion_exp(x[3:]) * self.reference).normalised
        x[3:] = 0.0
        self.ukf.x = x


def smooth(ukf: UkfSmoother, corrected_pose: Pose, twist: Optional[Twist] = None,
           dt: Optional[float] = None) -> Pose:
    return ukf.smooth(corrected_pose, twist, dt)
