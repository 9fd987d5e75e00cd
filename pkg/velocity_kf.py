#!/usr/bin/env python3
"""
6D object twist filter
Linear Kalman filter on [v, omega] driven by event optical flow through the interaction matrix
"""

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from filterpy.kalman import KalmanFilter

from core import BehindCameraError, CameraIntrinsics, Twist
from flow import FlowVector

logger = logging.getLogger(__name__)


@dataclass
class FilterStats:
    """Per-cycle measurement bookkeeping"""
    applied: int = 0
    depth_misses: int = 0
    gated: int = 0

    def reset(self):
        self.applied = self.depth_misses = self.gated = 0


def interaction_matrix(u: float, v: float, z: float, K: CameraIntrinsics) -> np.ndarray:
    """
    Image Jacobian of a point under object motion

    J @ [v, omega] is the pixel velocity of the object point imaged at (u, v)
    with depth z when every object point p moves with v + omega x p.

    Args:
        u, v: Pixel coordinates
        z: Depth of the point in meters
        K: Camera intrinsics

    Returns:
        (2, 6) matrix

    Raises:
        BehindCameraError: if z <= 0
    """
    if z <= 0:
        raise BehindCameraError(f"interaction matrix needs positive depth, got {z}")
    fx, fy = K.fx, K.fy
    ub, vb = u - K.cx, v - K.cy
    return np.array([
        [fx / z, 0.0, -ub / z, -ub * vb / fy, fx + ub * ub / fx, -(fx / fy) * vb],
        [0.0, fy / z, -vb / z, -(fy + vb * vb / fy), ub * vb / fx, (fy / fx) * ub],
    ])


class TwistFilter:
    """Kalman filter with decayed-twist motion model and per-flow sequential updates"""

    def __init__(self, rho: float = 0.5, q_v: float = 0.1, q_w: float = 0.5, r_px: float = 0.5,
                 gating: bool = True, gate: float = 9.0, init_v_std: float = 1.0,
                 init_w_std: float = 3.0):
        """
        Initialize at zero twist

        Args:
            rho: Twist decay per cycle
            q_v: Process noise std of the linear block (m/s)
            q_w: Process noise std of the angular block (rad/s)
            r_px: Flow measurement noise std in pixels (after scaling by the period)
            gating: Skip measurements whose squared Mahalanobis distance exceeds gate
            gate: Squared Mahalanobis threshold (9 ~ 99% for 2 dof)
            init_v_std, init_w_std: Initial state std
        """
        self.rho = rho
        self.gating = gating
        self.gate = gate
        self.kf = KalmanFilter(dim_x=6, dim_z=2)
        self.kf.F = rho * np.eye(6)
        self.kf.Q = np.diag([q_v ** 2] * 3 + [q_w ** 2] * 3)
        self.kf.R = (r_px ** 2) * np.eye(2)
        self.kf.P = np.diag([init_v_std ** 2] * 3 + [init_w_std ** 2] * 3)
        self.stats = FilterStats()

    @classmethod
    def from_config(cls, config) -> "TwistFilter":
        return cls(config.kf_rho, config.kf_q_v, config.kf_q_w, config.kf_r_px, config.kf_gating,
                   config.kf_gate, config.kf_init_v_std, config.kf_init_w_std)

    @property
    def state(self) -> np.ndarray:
        return self.kf.x.reshape(6).copy()

    @property
    def covariance(self) -> np.ndarray:
        return self.kf.P.copy()

    @property
    def twist(self) -> Twist:
        return Twist.from_vector(self.kf.x.reshape(6))

    def set_state(self, state, covariance: Optional[np.ndarray] = None):
        self.kf.x = np.asarray(state, dtype=np.float64).reshape(6, 1)
        if covariance is not None:
            self.kf.P = np.asarray(covariance, dtype=np.float64).copy()

    def predict(self):
        """x <- rho x, P <- rho^2 P + Q"""
        self.kf.predict()
        self._symmetrize()

    def update(self, flow: FlowVector, z: float, K: CameraIntrinsics, dt: float) -> bool:
        """
        One sequential update from a flow vector

        The measurement is the flow scaled by dt (pixels) against H = J dt.

        Args:
            flow: Registered flow at pixel (flow.u, flow.v)
            z: Rendered depth at that pixel
            K: Camera intrinsics
            dt: Tracker period

        Returns:
            True if the measurement was applied, False if gated
        """
        H = interaction_matrix(flow.u, flow.v, z, K) * dt
        measurement = np.array([flow.fu, flow.fv]) * dt
        if not np.all(np.isfinite(measurement)):
            self.stats.gated += 1
            return False
        if self.gating:
            innovation = measurement - (H @ self.kf.x).reshape(2)
            S = H @ self.kf.P @ H.T + self.kf.R
            distance = float(innovation @ np.linalg.solve(S, innovation))
            if distance > self.gate:
                self.stats.gated += 1
                logger.debug(f"Gated flow at ({flow.u:.1f}, {flow.v:.1f}), mahalanobis^2={distance:.1f}")
                return False
        self.kf.update(measurement, H=H)
        self._symmetrize()
        self.stats.applied += 1
        return True

    def update_flows(self, flows: Iterable[FlowVector], depth_lookup, K: CameraIntrinsics, dt: float) -> FilterStats:
        """
        Sequential updates for one cycle's flows

        Args:
            flows: Flow vectors
            depth_lookup: Callable (u, v) -> depth or None for off-object pixels
            K: Camera intrinsics
            dt: Tracker period

        Returns:
            This cycle's FilterStats
        """
        self.stats.reset()
        for flow in flows:
            z = depth_lookup(flow.u, flow.v)
            if z is None or not np.isfinite(z) or z <= 0:
                self.stats.depth_misses += 1
                continue
            self.update(flow, z, K, dt)
        return self.stats

    def _symmetrize(self):
        self.kf.P = 0.5 * (self.kf.P + self.kf.P.T)
