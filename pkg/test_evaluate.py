#!/usr/bin/env python3
"""
Evaluation Tests
Association, RMSE figures and the track-log summary
"""

import math
import os
import sys
import tempfile

import numpy as np
import pytest
from pyquaternion import Quaternion

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core import Pose, TimedPose
from evaluate import EvaluationError, associate, evaluate, write_series


def trajectory(times, offset=(0.0, 0.0, 0.0), angle_deg=0.0):
    rotation = Quaternion(axis=[0, 0, 1], angle=math.radians(angle_deg))
    return [TimedPose(t, Pose(np.array([0.0, 0.0, 0.5]) + offset, rotation)) for t in times]


def test_identical_trajectories_have_zero_error():
    times = [0.002 * k for k in range(10)]
    report = evaluate(trajectory(times), trajectory(times))
    assert report.cycles == 10
    assert report.position_rmse_cm == 0.0
    assert report.rotation_rmse_deg == pytest.approx(0.0, abs=1e-6)


def test_constant_offset_rmse():
    times = [0.002 * k for k in range(10)]
    report = evaluate(trajectory(times, (0.003, 0.004, 0.0), 5.0), trajectory(times))
    assert report.position_rmse_cm == pytest.approx(0.5)
    assert report.position_std_cm == pytest.approx(0.0, abs=1e-9)
    assert report.rotation_rmse_deg == pytest.approx(5.0)


def test_association_within_half_period():
    estimate = trajectory([0.0, 0.0021, 0.0045, 0.0100])
    ground_truth = trajectory([0.0, 0.002, 0.004, 0.006])
    pairs = associate(estimate, ground_truth, 0.001)
    assert [(e.t, g.t) for e, g in pairs] == [(0.0, 0.0), (0.0021, 0.002), (0.0045, 0.004)]


def test_association_tie_takes_earlier_sample():
    pairs = associate(trajectory([1.0]), trajectory([0.5, 1.5]), 1.0)
    assert pairs[0][1].t == 0.5


def test_no_overlap_is_an_error():
    with pytest.raises(EvaluationError):
        evaluate(trajectory([1.0, 1.002]), trajectory([0.0, 0.002]))
    with pytest.raises(EvaluationError):
        evaluate([], trajectory([0.0]))


def test_summary_and_series(tmp_path):
    times = [0.002 * k for k in range(4)]
    report = evaluate(trajectory(times, (0.01, 0.0, 0.0)), trajectory(times))
    text = report.summary()
    assert "cycles: 4" in text
    assert "e_p(sigma)(cm): 1.0000 (0.0000)" in text
    path = os.path.join(str(tmp_path), 'errors.csv')
    write_series(report, path)
    with open(path) as handle:
        lines = handle.read().splitlines()
    assert lines[0] == "t,position_error_cm,rotation_error_deg"
    assert len(lines) == 5


def test_track_log_summary(tmp_path):
    path = os.path.join(str(tmp_path), 'cycles.csv')
    with open(path, 'w') as handle:
        handle.write("t,flows,applied,depth_misses,gated,selected,blind,flow_ms,correct_ms,total_ms\n")
        handle.write("0.002,3,3,0,0,0,0,1.0,4.0,5.0\n")
        handle.write("0.004,0,0,0,0,-1,1,3.0,2.0,5.0\n")
    times = [0.002, 0.004]
    report = evaluate(trajectory(times), trajectory(times), track_log=path)
    assert report.blind_cycles == 1
    assert report.stage_ms == {'flow_ms': 2.0, 'correct_ms': 3.0, 'total_ms': 5.0}
    assert "blind cycles: 1" in report.summary()


def main():
    """Run the evaluation tests without pytest"""
    print("Evaluation Tests")
    print("=" * 50)
    tests = [value for name, value in globals().items() if name.startswith('test_') and callable(value)]
    failed = 0
    for test in tests:
        try:
            if test.__code__.co_argcount:
                test(tempfile.mkdtemp())
            else:
                test()
            print(f"[SUCCESS] {test.__name__}")
        except Exception as e:
            failed += 1
            print(f"[FAILED] {test.__name__}: {e}")
    return 1 if failed else 0


if __name__ == "__main__":
    exit(main())
