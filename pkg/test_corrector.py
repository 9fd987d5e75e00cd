#!/usr/bin/env python3
"""
Pose Corrector Tests
Hypothesis generation, scoring and static recovery on a simulated EROS surface
"""

import math
import os
import sys

import numpy as np
import pytest
from pyquaternion import Quaternion

sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from core import Pose, Roi, mean_reprojection_offset, rotation_angle_between
from corrector import (HYPOTHESIS_COUNT, HYPOTHESIS_NAMES, HypothesisSet, PoseCorrector, apply_increment,
                       normalized_score, perturbations, reference_geometry, score, template_energy)
from eros import ErosSurface
from render import TemplateImage, edge_template
from simulator import DEFAULT_INTRINSICS, cube_mesh, edge_events

K = DEFAULT_INTRINSICS
CUBE = cube_mesh(0.1)
# no cube face is edge-on at this pose
TRUTH = Pose([0.06, 0.04, 0.5], Quaternion(axis=[0.0, 1.0, 0.0], angle=math.radians(10.0))
             * Quaternion(axis=[1.0, 0.0, 0.0], angle=math.radians(20.0)))


def eros_at(pose: Pose) -> ErosSurface:
    surface = ErosSurface(K.width, K.height)
    surface.update_batch(edge_events(CUBE, pose, K, 0.0))
    return surface


def test_thirteen_hypotheses_in_order():
    z_ref, p_bar = reference_geometry(TRUTH, K)
    increments = perturbations(TRUTH, K, z_ref, p_bar)
    assert len(increments) == HYPOTHESIS_COUNT == 13
    assert HYPOTHESIS_NAMES[0] == 'null'
    assert np.all(increments[0].translation == 0.0)
    assert increments[0].rotation == Quaternion()


def test_translation_steps_are_one_pixel():
    z_ref, p_bar = reference_geometry(TRUTH, K)
    assert z_ref == 0.5
    assert p_bar == pytest.approx(math.hypot(72.0, 48.0))
    increments = perturbations(TRUTH, K, z_ref, p_bar)
    assert increments[1].translation[0] == pytest.approx(0.5 / 600.0)
    assert increments[2].translation[0] == pytest.approx(-0.5 / 600.0)
    assert increments[3].translation[1] == pytest.approx(0.5 / 600.0)
    assert increments[5].translation[2] == pytest.approx(0.5 / p_bar)
    for increment in increments[7:]:
        assert np.all(increment.translation == 0.0)
        assert math.degrees(increment.rotation.angle) == pytest.approx(0.5)


def test_depth_step_clamped_near_principal_point():
    centered = Pose([0.0, 0.0, 0.5], Quaternion())
    z_ref, p_bar = reference_geometry(centered, K)
    assert p_bar == 0.0
    increments = perturbations(centered, K, z_ref, p_bar)
    assert increments[5].translation[2] == pytest.approx(0.5)


def test_perturbations_need_positive_depth():
    with pytest.raises(ValueError):
        perturbations(TRUTH, K, 0.0, 10.0)


def test_increment_composition():
    increment = Pose([0.001, 0.0, 0.0], Quaternion(axis=[0, 0, 1], angle=0.1))
    result = apply_increment(TRUTH, increment)
    assert result.translation == pytest.approx(TRUTH.translation + [0.001, 0.0, 0.0])
    assert np.allclose(result.rotation.q, (TRUTH.rotation * increment.rotation).q)


def test_score_is_signed_dot_product():
    template = TemplateImage(np.array([[1.0, -0.5], [0.25, 0.0]]), Roi(0, 0, 2, 2))
    assert score(template, np.array([[0.5, 1.0], [1.0, 1.0]])) == pytest.approx(0.25)


def line_template(columns):
    mask = np.zeros((401, 41), dtype=bool)
    mask[:, columns] = True
    return edge_template(mask, Roi(0, 0, 41, 401))


def test_energy_is_unscaled_mask_response():
    template = line_template([20])
    assert np.abs(template.values).max() == pytest.approx(1.0)
    assert template_energy(template) == pytest.approx(template.peak * template.values[:, 20].sum())
    empty = edge_template(np.zeros((5, 5), dtype=bool), Roi(0, 0, 5, 5))
    assert normalized_score(empty, np.ones((5, 5))) == -math.inf


def test_normalized_score_prefers_matching_thickness():
    thin, doubled = line_template([20]), line_template([20, 21])
    thin_patch = thin.mask.astype(np.float64)
    doubled_patch = doubled.mask.astype(np.float64)
    # raw dot products favour the template with more edge mass
    assert score(doubled, thin_patch) * doubled.peak > score(thin, thin_patch) * thin.peak
    assert normalized_score(thin, thin_patch) > normalized_score(doubled, thin_patch)
    assert normalized_score(doubled, doubled_patch) > normalized_score(thin, doubled_patch)
    shifted = line_template([21])
    assert normalized_score(thin, thin_patch) > normalized_score(shifted, thin_patch)


def test_ties_select_null():
    hypotheses = HypothesisSet([Pose.identity()] * HYPOTHESIS_COUNT, scores=np.ones(HYPOTHESIS_COUNT))
    assert hypotheses.selected == 0


def test_aligned_surface_selects_null():
    corrector = PoseCorrector()
    hypotheses = corrector.evaluate(TRUTH, eros_at(TRUTH), CUBE, K)
    assert len(hypotheses.templates) == HYPOTHESIS_COUNT
    assert hypotheses.selected == 0
    result = corrector.correct(TRUTH, eros_at(TRUTH), CUBE, K)
    assert np.array_equal(result.pose.translation, TRUTH.translation)


def test_correction_moves_toward_the_surface():
    eros = eros_at(TRUTH)
    offset = Pose(TRUTH.translation + [2.0 * 0.5 / 600.0, 0.0, 0.0], TRUTH.rotation)
    hypotheses = PoseCorrector().evaluate(offset, eros, CUBE, K)
    assert HYPOTHESIS_NAMES[hypotheses.selected] == '-x'


def test_recovers_translation_offset():
    eros = eros_at(TRUTH)
    pose = Pose(TRUTH.translation + [3.0 * 0.5 / 600.0, 0.0, 0.0], TRUTH.rotation)
    corrector = PoseCorrector()
    assert mean_reprojection_offset(pose, TRUTH, CUBE.vertices, K) > 2.5
    for _ in range(10):
        pose = corrector.correct(pose, eros, CUBE, K).pose
    assert mean_reprojection_offset(pose, TRUTH, CUBE.vertices, K) <= 1.0


def test_recovers_rotation_offset():
    eros = eros_at(TRUTH)
    pose = Pose(TRUTH.translation, TRUTH.rotation * Quaternion(axis=[0, 0, 1], angle=math.radians(2.0)))
    corrector = PoseCorrector()
    for _ in range(10):
        pose = corrector.correct(pose, eros, CUBE, K).pose
    assert rotation_angle_between(pose, TRUTH) <= 0.5 + 1e-6
    assert mean_reprojection_offset(pose, TRUTH, CUBE.vertices, K) <= 1.0


def test_inner_iterations_apply_several_steps():
    eros = eros_at(TRUTH)
    pose = Pose(TRUTH.translation + [3.0 * 0.5 / 600.0, 0.0, 0.0], TRUTH.rotation)
    result = PoseCorrector(iterations=10).correct(pose, eros, CUBE, K)
    assert result.iterations == 10
    assert mean_reprojection_offset(result.pose, TRUTH, CUBE.vertices, K) <= 1.0


def test_invisible_object_is_skipped():
    behind = Pose([0.0, 0.0, -0.5], Quaternion())
    result = PoseCorrector().correct(behind, eros_at(TRUTH), CUBE, K)
    assert result.skipped
    assert result.pose is behind


def main():
    """Run the corrector tests without pytest"""
    print("Pose Corrector Tests")
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
