#!/usr/bin/env python3
"""
Simulator Tests
Pose interpolation, edge-toggle event generation and the desk-scale scenes
"""

import math
import os
import sys

import numpy as np
import pytest
from pyquaternion import Quaternion

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core import Pose, TimedPose, rotation_angle_between
from corrector import MIN_RADIAL_DISTANCE_PX, reference_geometry
from simulator import (DEFAULT_INTRINSICS, SCENES, SimConfig, SimulationError, build_scene, cube_mesh,
                       edge_events, edge_pixels, interpolate_pose, linear_trajectory, plane_mesh,
                       screw_trajectory, simulate)

K = DEFAULT_INTRINSICS
START = Pose([0.05, 0.04, 0.5], Quaternion(axis=[1.0, 0.0, 0.0], angle=math.radians(20.0)))


def sweep(speed_px: float, distance_px: float, seed: int = 0):
    """A 100 px tall plane edge starting at u = 100.5 and sweeping right; the far edge stays off-sensor"""
    depth = 0.5
    width, height = 2.0, 100.0 * depth / K.fy
    center_x = (100.5 - K.cx) * depth / K.fx + 0.5 * width
    start = Pose([center_x, 0.0, depth], Quaternion())
    velocity = speed_px * depth / K.fx
    trajectory = linear_trajectory(start, [velocity, 0.0, 0.0], distance_px / speed_px)
    return simulate(plane_mesh(width, height), trajectory, K, SimConfig(seed=seed))


def test_interpolate_pose_examples():
    quarter = Quaternion(axis=[0, 0, 1], angle=math.pi / 2)
    trajectory = [TimedPose(0.0, Pose([0.0, 0.0, 0.4], Quaternion())), TimedPose(1.0, Pose([0.0, 0.0, 0.6], quarter))]
    assert interpolate_pose(trajectory, 1.0) is trajectory[1].pose
    middle = interpolate_pose(trajectory, 0.5)
    assert middle.translation == pytest.approx([0.0, 0.0, 0.5])
    expected = Pose(np.zeros(3), Quaternion(axis=[0, 0, 1], angle=math.pi / 4))
    assert rotation_angle_between(middle, expected) == pytest.approx(0.0, abs=1e-6)
    with pytest.raises(SimulationError):
        interpolate_pose(trajectory, 1.5)


def test_static_object_fires_nothing():
    trajectory = linear_trajectory(START, [0.0, 0.0, 0.0], 0.02)
    events, ground_truth = simulate(cube_mesh(0.1), trajectory, K)
    assert len(events) == 0
    assert len(ground_truth) == 11


def test_edge_sweep_event_count():
    events, _ = sweep(300.0, 90.0)
    expected = 2 * 100 * 90
    assert abs(len(events) - expected) <= 0.1 * expected
    assert set(np.unique(events.polarity)) == {-1, 1}


def test_sweep_pixels_do_not_depend_on_speed():
    slow, _ = sweep(300.0, 60.0)
    fast, _ = sweep(600.0, 60.0)
    assert np.array_equal(np.unique(slow.y * K.width + slow.x), np.unique(fast.y * K.width + fast.x))
    assert fast.t[-1] == pytest.approx(0.5 * slow.t[-1], abs=0.001)


def test_events_sorted_and_in_span():
    mesh = cube_mesh(0.1)
    trajectory = screw_trajectory(START, [0.1, 0.0, 0.0], [0, 1, 0], 90.0, 0.02)
    events, ground_truth = simulate(mesh, trajectory, K, SimConfig(noise_rate=5000.0, jitter=1e-5, seed=4))
    assert len(events) > 0
    assert events.is_sorted()
    assert events.t[0] >= 0.0 and events.t[-1] <= 0.02
    assert np.all(K.contains(events.x, events.y))
    assert [g.t for g in ground_truth] == pytest.approx([0.002 * k for k in range(11)])


def test_events_lie_on_rendered_edges():
    mesh = cube_mesh(0.1)
    trajectory = screw_trajectory(START, [0.1, 0.0, 0.0], [0, 1, 0], 90.0, 0.01)
    sim_config = SimConfig()
    events, _ = simulate(mesh, trajectory, K, sim_config)
    frames = [0.0 + i * sim_config.dt for i in range(21)]
    masks = [edge_pixels(mesh, interpolate_pose(trajectory, min(t, 0.01)), K) for t in frames]
    for event in events:
        frame = int(np.searchsorted(frames, event.t, side='left'))
        flat = event.y * K.width + event.x
        if event.polarity > 0:
            assert flat in masks[frame]
        else:
            assert flat in masks[frame - 1]


def test_simulation_is_deterministic():
    mesh = cube_mesh(0.1)
    trajectory = screw_trajectory(START, [0.1, 0.0, 0.0], [0, 1, 0], 90.0, 0.02)
    sim_config = SimConfig(noise_rate=2000.0, jitter=1e-5, seed=8)
    a, _ = simulate(mesh, trajectory, K, sim_config)
    b, _ = simulate(mesh, trajectory, K, sim_config)
    for column in ('t', 'x', 'y', 'polarity'):
        assert np.array_equal(getattr(a, column), getattr(b, column))


def test_bad_trajectories_rejected():
    with pytest.raises(SimulationError):
        simulate(cube_mesh(0.1), [TimedPose(0.0, START)], K)
    with pytest.raises(SimulationError):
        simulate(cube_mesh(0.1), [TimedPose(0.0, START), TimedPose(0.0, START)], K)
    behind = Pose([0.0, 0.0, -1.0], Quaternion())
    with pytest.raises(SimulationError):
        simulate(cube_mesh(0.1), linear_trajectory(behind, [0.0, 0.0, 0.0], 0.005), K)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        SimConfig(noise_rate=-1.0)


def test_edge_events_flash():
    events = edge_events(cube_mesh(0.1), START, K, 0.25)
    assert len(events) == len(edge_pixels(cube_mesh(0.1), START, K))
    assert np.all(events.t == 0.25)
    assert np.all(events.polarity == 1)


@pytest.mark.parametrize("name", SCENES)
def test_scenes_stay_off_the_principal_point(name):
    mesh, trajectory, K_scene = build_scene(name, 0.5)
    assert len(mesh.triangles) == 12
    for timed in trajectory:
        z_ref, p_bar = reference_geometry(timed.pose, K_scene)
        assert z_ref > 0
        assert p_bar >= MIN_RADIAL_DISTANCE_PX


def test_unknown_scene_rejected():
    with pytest.raises(ValueError):
        build_scene('orbit')


def main():
    """Run the simulator tests without pytest"""
    print("Simulator Tests")
    print("=" * 50)
    tests = [value for name, value in globals().items() if name.startswith('test_') and callable(value)]
    failed = 0
    for test in tests:
        try:
            if test is test_scenes_stay_off_the_principal_point:
                for name in SCENES:
                    test(name)
            else:
                test()
            print(f"[SUCCESS] {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"[FAILED] {test.__name__}: {e}")
    return 1 if failed else 0


if __name__ == "__main__":
    exit(main())
