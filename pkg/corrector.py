#!/usr/bin/env python3
"""
Template-based pose correction
Scores 13 perturbed pose hypotheses against the EROS surface and applies the best one
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from pyquaternion import Quaternion

from core import CameraIntrinsics, Pose, Roi
from data_io import Mesh
from eros import ErosSurface
from render import ObjectNotVisibleError, TemplateImage, dog_margin, render_template, template_roi

logger = logging.getLogger(__name__)

HYPOTHESIS_NAMES = ('null', '+x', '-x', '+y', '-y', '+z', '-z',
                    '+alpha', '-alpha', '+beta', '-beta', '+gamma', '-gamma')
HYPOTHESIS_COUNT = len(HYPOTHESIS_NAMES)
MIN_RADIAL_DISTANCE_PX = 1.0


@dataclass
class HypothesisSet:
    """The 13 increments of one correction step with their templates and scores"""
    increments: List[Pose]
    templates: List[Optional[TemplateImage]] = field(default_factory=list)
    scores: np.ndarray = field(default_factory=lambda: np.zeros(HYPOTHESIS_COUNT))
    roi: Optional[Roi] = None

    @property
    def selected(self) -> int:
        """Index of the best score; ties favour the null hypothesis, then the fixed order"""
        return int(np.argmax(self.scores))


@dataclass
class CorrectionResult:
    pose: Pose
    hypotheses: Optional[HypothesisSet]
    skipped: bool = False
    iterations: int = 0


def reference_geometry(pose: Pose, K: CameraIntrinsics) -> Tuple[float, float]:
    """
    Depth of the object origin and its radial pixel distance from the principal point

    Returns:
        (z_ref, p_bar); p_bar is not clamped here
    """
    x, y, z = pose.translation
    if z <= 0:
        return float(z), 0.0
    ub = K.fx * x / z
    vb = K.fy * y / z
    return float(z), float(math.hypot(ub, vb))


def perturbations(pose: Pose, K: CameraIntrinsics, z_ref: float, p_bar: float,
                  perturb_px: float = 1.0, perturb_deg: float = 0.5) -> List[Pose]:
    """
    The 13 pose increments: identity, then +/- x, y, z translations and +/- alpha, beta, gamma rotations

    Translations are camera-frame offsets worth perturb_px pixels of image
    motion at depth z_ref; rotations are perturb_deg about the object axes.

    Args:
        pose: Pose being perturbed; increments are relative to it
        K: Camera intrinsics
        z_ref: Object depth in meters, > 0
        p_bar: Radial pixel distance of the object origin, clamped to >= 1

    Returns:
        list of 13 Pose increments in HYPOTHESIS_NAMES order
    """
    if z_ref <= 0:
        raise ValueError(f"reference depth must be positive, got {z_ref}")
    p_bar = max(p_bar, MIN_RADIAL_DISTANCE_PX)
    dx = z_ref * perturb_px / K.fx
    dy = z_ref * perturb_px / K.fy
    dz = z_ref * perturb_px / p_bar
    theta = math.radians(perturb_deg)
    no_rotation = Quaternion(1.0, 0.0, 0.0, 0.0)
    increments = [Pose(np.zeros(3), no_rotation)]
    for axis, step in enumerate((dx, dy, dz)):
        for sign in (1.0, -1.0):
            offset = np.zeros(3)
            offset[axis] = sign * step
            increments.append(Pose(offset, no_rotation))
    for axis in np.eye(3):
        for sign in (1.0, -1.0):
            increments.append(Pose(np.zeros(3), Quaternion(axis=axis, angle=sign * theta)))
    return increments


def apply_increment(pose: Pose, increment: Pose) -> Pose:
    """Add the translation in the camera frame and right-multiply the rotation"""
    return Pose(pose.translation + increment.translation, pose.rotation * increment.rotation)


def score(template: TemplateImage, eros_patch: np.ndarray) -> float:
    """Signed dot product of a template with an aligned EROS patch"""
    return float(np.sum(template.values * eros_patch))


def template_energy(template: TemplateImage) -> float:
    """Unscaled response of a template on its own edge mask"""
    support = template.mask if template.mask is not None else template.values > 0
    return template.peak * float(np.sum(template.values[support]))


def normalized_score(template: TemplateImage, eros_patch: np.ndarray) -> float:
    """
    Unscaled template score divided by the root of the template energy

    Returns -inf for a template without positive energy. A template that
    grows extra edges around the true ones gains mass but not normalized score.
    """
    energy = template_energy(template)
    if energy <= 0:
        return -math.inf
    return template.peak * score(template, eros_patch) / math.sqrt(energy)


class PoseCorrector:
    """Renders hypothesis templates and picks the increment best matching the EROS surface"""

    def __init__(self, perturb_px: float = 1.0, perturb_deg: float = 0.5, sigma1: float = 1.0,
                 sigma2: float = 2.5, roi_dilation: float = 0.2, crease_angle_deg: float = 30.0,
                 depth_jump: float = 0.01, iterations: int = 1):
        self.perturb_px = perturb_px
        self.perturb_deg = perturb_deg
        self.sigma1 = sigma1
        self.sigma2 = sigma2
        self.roi_dilation = roi_dilation
        self.crease_angle_deg = crease_angle_deg
        self.depth_jump = depth_jump
        self.iterations = iterations

    @classmethod
    def from_config(cls, config) -> "PoseCorrector":
        return cls(config.perturb_px, config.perturb_deg, config.dog_sigma1, config.dog_sigma2,
                   config.roi_dilation, config.crease_angle_deg, config.depth_jump,
                   config.correction_iterations)

    def hypothesis_roi(self, mesh: Mesh, pose: Pose, K: CameraIntrinsics) -> Roi:
        margin = dog_margin(self.sigma2) + int(math.ceil(self.perturb_px)) + 1
        return template_roi(mesh, pose, K, self.roi_dilation, margin)

    def evaluate(self, pose: Pose, eros: ErosSurface, mesh: Mesh, K: CameraIntrinsics) -> HypothesisSet:
        """
        Render and score all hypotheses around pose on one shared ROI

        Scores are normalized_score values; a hypothesis that is not visible
        keeps -inf.

        Raises:
            ObjectNotVisibleError: the null hypothesis is not visible
        """
        z_ref, p_bar = reference_geometry(pose, K)
        if z_ref <= 0:
            raise ObjectNotVisibleError("object origin is behind the camera")
        increments = perturbations(pose, K, z_ref, p_bar, self.perturb_px, self.perturb_deg)
        roi = self.hypothesis_roi(mesh, pose, K)
        patch = eros.snapshot(roi)
        hypotheses = HypothesisSet(increments, roi=roi)
        scores = np.full(HYPOTHESIS_COUNT, -np.inf)
        for index, increment in enumerate(increments):
            try:
                template = render_template(mesh, apply_increment(pose, increment), K, roi, self.sigma1,
                                           self.sigma2, self.crease_angle_deg, self.depth_jump)
            except ObjectNotVisibleError:
                if index == 0:
                    raise
                hypotheses.templates.append(None)
                continue
            hypotheses.templates.append(template)
            scores[index] = normalized_score(template, patch)
        hypotheses.scores = scores
        return hypotheses

    def correct(self, propagated_pose: Pose, eros: ErosSurface, mesh: Mesh,
                K: CameraIntrinsics) -> CorrectionResult:
        """
        Apply the argmax increment, once per configured iteration

        Returns:
            CorrectionResult; when the object is not visible the propagated
            pose comes back unchanged with skipped set
        """
        pose = propagated_pose
        hypotheses = None
        for iteration in range(self.iterations):
            try:
                hypotheses = self.evaluate(pose, eros, mesh, K)
            except ObjectNotVisibleError as e:
                logger.debug(f"Correction skipped: {e}")
                return CorrectionResult(pose, hypotheses, skipped=iteration == 0, iterations=iteration)
            selected = hypotheses.selected
            logger.debug(f"Selected hypothesis {HYPOTHESIS_NAMES[selected]} "
                         f"score={hypotheses.scores[selected]:.4f}")
            pose = apply_increment(pose, hypotheses.increments[selected])
        return CorrectionResult(pose, hypotheses, iterations=self.iterations)


def correct(propagated_pose: Pose, eros: ErosSurface, mesh: Mesh, K: CameraIntrinsics,
            corrector: Optional[PoseCorrector] = None) -> CorrectionResult:
    """Single correction with default or supplied settings"""
    return (corrector or PoseCorrector()).correct(propagated_pose, eros, mesh, K)
