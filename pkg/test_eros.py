#!/usr/bin/env python3
"""
EROS Surface Tests
Per-event decay rule, bounds and snapshots
"""

import os
import sys

import numpy as np
import pytest

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core import Event, EventArray, Pose, project
from eros import ErosSurface
from simulator import DEFAULT_INTRINSICS, SimConfig, linear_trajectory, plane_mesh, simulate


def test_single_event_sets_center():
    surface = ErosSurface(32, 32)
    surface.update(Event(0.0, 10, 10, 1))
    assert surface.value_at(10, 10) == 1.0
    assert surface.values.sum() == 1.0


def test_neighbour_decays_by_lambda():
    surface = ErosSurface(32, 32)
    surface.update(Event(0.0, 11, 10, 1))
    surface.update(Event(0.001, 10, 10, -1))
    assert surface.value_at(11, 10) == pytest.approx(0.7)
    assert surface.value_at(10, 10) == 1.0


def test_two_event_trace_snapshot():
    surface = ErosSurface(32, 32)
    surface.update(Event(0.0, 10, 10, 1))
    surface.update(Event(0.001, 11, 10, 1))
    patch = surface.snapshot_roi((10, 10), 1)
    expected = np.zeros((3, 3))
    expected[1, 1] = 0.7
    expected[1, 2] = 1.0
    assert np.allclose(patch, expected)


def test_repeated_events_decay_geometrically():
    surface = ErosSurface(32, 32)
    surface.update(Event(0.0, 12, 12, 1))
    for i in range(10):
        surface.update(Event(0.001 * (i + 1), 14, 12, 1))
    assert surface.value_at(12, 12) == pytest.approx(0.7 ** 10)
    assert surface.value_at(14, 12) == 1.0


def test_pixels_outside_kernel_untouched():
    surface = ErosSurface(32, 32)
    surface.update(Event(0.0, 5, 5, 1))
    surface.update(Event(0.001, 9, 5, 1))
    assert surface.value_at(5, 5) == 1.0


def test_values_stay_in_unit_interval():
    rng = np.random.default_rng(5)
    surface = ErosSurface(40, 30, kernel=5, decay=0.6)
    count = 5000
    events = EventArray(np.sort(rng.uniform(0, 1, count)), rng.integers(0, 40, count),
                        rng.integers(0, 30, count), rng.choice([-1, 1], count))
    surface.update_batch(events)
    assert surface.values.min() >= 0.0
    assert surface.values.max() <= 1.0
    last = next(iter(events.select(slice(-1, None))))
    assert surface.value_at(last.x, last.y) == 1.0


def test_batch_matches_single_updates():
    rng = np.random.default_rng(6)
    count = 500
    events = EventArray(np.sort(rng.uniform(0, 1, count)), rng.integers(0, 20, count),
                        rng.integers(0, 20, count), np.ones(count))
    batch, single = ErosSurface(20, 20), ErosSurface(20, 20)
    batch.update_batch(events)
    for event in events:
        single.update(event)
    assert np.array_equal(batch.values, single.values)


def test_border_events_clip_the_kernel():
    surface = ErosSurface(16, 16)
    surface.update(Event(0.0, 1, 0, 1))
    surface.update(Event(0.001, 0, 0, 1))
    surface.update(Event(0.002, 15, 15, 1))
    assert surface.value_at(1, 0) == pytest.approx(0.7)
    assert surface.value_at(15, 15) == 1.0


def test_out_of_bounds_event_rejected():
    surface = ErosSurface(16, 16)
    with pytest.raises(ValueError):
        surface.update(Event(0.0, 16, 3, 1))
    with pytest.raises(ValueError):
        surface.update_batch(EventArray([0.0], [-1], [0], [1]))


def test_even_kernel_rejected():
    with pytest.raises(ValueError):
        ErosSurface(16, 16, kernel=6)


def test_snapshot_zero_padding():
    surface = ErosSurface(16, 16)
    surface.update(Event(0.0, 0, 0, 1))
    patch = surface.snapshot_roi((0, 0), 2)
    assert patch.shape == (5, 5)
    assert patch[2, 2] == 1.0
    assert patch[:2, :].sum() == 0.0 and patch[:, :2].sum() == 0.0
    assert np.all(surface.snapshot_roi((100, 100), 3) == 0.0)
    assert surface.snapshot_roi((0, 0), 0).tolist() == [[1.0]]


def test_sweep_speed_does_not_move_the_edge():
    """The surface after an edge sweep depends on where the edge is, not how fast it got there"""
    K = DEFAULT_INTRINSICS
    start = Pose([0.0, 0.0, 0.5], [1.0, 0.0, 0.0, 0.0])
    mesh = plane_mesh(0.2, 0.1)
    final_u = project((0.05 - 0.1, 0.0, 0.5), K)[0]
    surfaces = []
    for speed in (0.05, 0.1):
        trajectory = linear_trajectory(start, [speed, 0.0, 0.0], 0.05 / speed)
        events, _ = simulate(mesh, trajectory, K, SimConfig(seed=3))
        surface = ErosSurface(K.width, K.height)
        surface.update_batch(events)
        surfaces.append(surface.values > 0.5)
    slow, fast = surfaces
    assert slow.any() and fast.any()
    ys, xs = np.nonzero(slow ^ fast)
    # the left edge ends at final_u; any difference must sit next to an edge
    right_u = project((0.05 + 0.1, 0.0, 0.5), K)[0]
    near = (np.abs(xs - final_u) <= 7) | (np.abs(xs - right_u) <= 7) | (np.abs(ys - 240) >= 40)
    assert near.all()


def main():
    """Run the EROS tests without pytest"""
    print("EROS Surface Tests")
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
