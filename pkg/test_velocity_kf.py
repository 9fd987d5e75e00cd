#!/usr/bin/env python3
"""
Twist Filter Tests
Interaction matrix against finite differences, decay, convergence and gating
"""

import os
import sys

import numpy as np
import pytest
from pyquaternion import Quaternion

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core import BehindCameraError, CameraIntrinsics, Pose, Twist, project, propagate
from flow import FlowVector
from velocity_kf import TwistFilter, interaction_matrix

K = CameraIntrinsics(600.0, 600.0, 320.0, 240.0, 640, 480)
TRUE_TWIST = np.array([0.1, -0.05, 0.02, 0.3, -0.5, 0.2])


def test_interaction_matrix_matches_finite_differences():
    rng = np.random.default_rng(10)
    dt = 1e-4
    for _ in range(1000):
        pose = Pose(rng.uniform([-0.15, -0.1, 0.4], [0.15, 0.1, 1.2]),
                    Quaternion(axis=rng.normal(size=3), angle=rng.uniform(0, np.pi)))
        body_point = rng.uniform(-0.05, 0.05, (1, 3))
        twist = Twist(rng.uniform(-0.5, 0.5, 3), rng.uniform(-3.0, 3.0, 3))
        point = pose.transform_points(body_point)[0]
        moved = propagate(pose, twist, dt).transform_points(body_point)[0]
        numeric = (np.array(project(moved, K)) - np.array(project(point, K))) / dt
        u, v = project(point, K)
        analytic = interaction_matrix(u, v, point[2], K) @ twist.as_vector()
        # one-sided difference, the curvature term is a few px/s at most
        assert np.linalg.norm(analytic - numeric) <= 0.01 * np.linalg.norm(numeric) + 2.0


def test_interaction_matrix_needs_positive_depth():
    with pytest.raises(BehindCameraError):
        interaction_matrix(320.0, 240.0, 0.0, K)


def test_pure_translation_rows():
    J = interaction_matrix(320.0, 240.0, 0.5, K)
    assert J[:, :3] == pytest.approx(np.array([[1200.0, 0.0, 0.0], [0.0, 1200.0, 0.0]]))


def test_decay_without_measurements():
    kf = TwistFilter()
    start = np.array([0.2, -0.1, 0.05, 1.0, 0.5, -0.25])
    kf.set_state(start)
    for _ in range(10):
        kf.predict()
        kf.update_flows([], lambda u, v: 0.5, K, 0.002)
    assert kf.state == pytest.approx(start * 2.0 ** -10)


def synthetic_flows(rng, count: int, t: float):
    """Exact flows of TRUE_TWIST at random points around a desk-scale object"""
    flows, depths = [], []
    for _ in range(count):
        point = np.array([0.05, 0.04, 0.5]) + rng.uniform(-0.06, 0.06, 3)
        u, v = project(point, K)
        fu, fv = interaction_matrix(u, v, point[2], K) @ TRUE_TWIST
        flows.append(FlowVector(u, v, fu, fv, t, 3))
        depths.append(point[2])
    return flows, depths


def test_converges_to_constant_twist():
    rng = np.random.default_rng(11)
    kf = TwistFilter(rho=0.5, q_v=1.0, q_w=10.0, r_px=0.01, gating=False)
    for cycle in range(50):
        kf.predict()
        flows, depths = synthetic_flows(rng, 30, 0.002 * cycle)
        for flow, z in zip(flows, depths):
            assert kf.update(flow, z, K, 0.002)
    error = np.abs(kf.state - TRUE_TWIST)
    assert np.all(error <= 0.05 * np.linalg.norm(TRUE_TWIST))


def test_outlier_is_gated():
    rng = np.random.default_rng(12)
    kf = TwistFilter(rho=0.5, q_v=1.0, q_w=10.0, r_px=0.5, gating=True, gate=9.0)
    for cycle in range(20):
        kf.predict()
        flows, depths = synthetic_flows(rng, 30, 0.002 * cycle)
        kf.update_flows(flows, lambda u, v, d=iter(depths): next(d), K, 0.002)
    before = kf.state
    wild = FlowVector(330.0, 250.0, 1e5, -1e5, 0.04, 3)
    kf.stats.reset()
    assert not kf.update(wild, 0.5, K, 0.002)
    assert kf.stats.gated == 1
    assert np.array_equal(kf.state, before)

    kf.gating = False
    assert kf.update(wild, 0.5, K, 0.002)
    assert not np.array_equal(kf.state, before)


def test_depth_misses_are_counted():
    kf = TwistFilter()
    flows = [FlowVector(100.0, 100.0, 50.0, 0.0, 0.002, 3), FlowVector(200.0, 120.0, 10.0, 5.0, 0.002, 4)]
    kf.predict()
    stats = kf.update_flows(flows, lambda u, v: None, K, 0.002)
    assert (stats.applied, stats.depth_misses, stats.gated) == (0, 2, 0)
    assert np.all(kf.state == 0.0)


def test_covariance_stays_positive_definite():
    rng = np.random.default_rng(13)
    kf = TwistFilter()
    for cycle in range(1000):
        kf.predict()
        flows, depths = synthetic_flows(rng, 10, 0.002 * cycle)
        for flow, z in zip(flows, depths):
            kf.update(flow, z, K, 0.002)
        if cycle % 50 == 49:
            P = kf.covariance
            assert np.array_equal(P, P.T)
            assert np.all(np.linalg.eigvalsh(P) > 0)


def test_zero_innovation_keeps_the_prediction():
    kf = TwistFilter(rho=0.5, gating=False)
    start = np.array([0.2, -0.1, 0.05, 1.0, 0.5, -0.25])
    kf.set_state(start)
    for cycle in range(1, 6):
        kf.predict()
        predicted = kf.state
        for u, v, z in ((300.0, 200.0, 0.5), (360.0, 280.0, 0.55), (250.0, 260.0, 0.45)):
            fu, fv = interaction_matrix(u, v, z, K) @ predicted
            assert kf.update(FlowVector(u, v, fu, fv, 0.002 * cycle, 3), z, K, 0.002)
        assert kf.state == pytest.approx(start * 0.5 ** cycle, rel=1e-9, abs=1e-12)


def test_unit_decay_grows_uncertainty_without_flow():
    kf = TwistFilter(rho=1.0)
    start = np.array([0.1, 0.0, 0.0, 0.0, 0.5, 0.0])
    kf.set_state(start)
    H = interaction_matrix(330.0, 250.0, 0.5, K) * 0.002
    spreads = []
    for _ in range(20):
        kf.predict()
        spreads.append(np.trace(H @ kf.covariance @ H.T + kf.kf.R))
        assert np.array_equal(kf.state, start)
    assert all(b > a for a, b in zip(spreads, spreads[1:]))


def main():
    """Run the twist filter tests without pytest"""
    print("Twist Filter Tests")
    print("=" * 50)
    tests = [value for name, value in globals().items() if name.startswith('test_') and callable(value)]
    failed = 0
    for test in tests:
        try:
            test()
            print(f"[SUCCESS] {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"[FAILED] {test.__name__}: {e}")
    return 1 if failed else 0


if __name__ == "__main__":
    exit(main())
