#!/usr/bin/env python3
"""
Software mesh renderer
Z-buffered depth maps for the velocity filter and Sobel + DoG edge templates for correction
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import cv2
import numpy as np

from core import CameraIntrinsics, Pose, Roi, TrackingError, project_points
from data_io import Mesh

logger = logging.getLogger(__name__)

# Triangles with a vertex closer than this (meters) are not rasterized
NEAR_PLANE = 1e-6
BACKGROUND_DEPTH = np.inf


class ObjectNotVisibleError(TrackingError):
    """Raised when the rendered silhouette inside the ROI is empty"""


@dataclass(frozen=True, eq=False)
class DepthMap:
    """
    Rasterized surface over a pixel window

    Args:
        depth: [h, w] camera-frame z in meters, BACKGROUND_DEPTH where no surface
        triangle_ids: [h, w] index of the visible triangle, -1 for background
        normals: (M, 3) unit face normals in the camera frame
        roi: Window of the image the arrays cover
    """
    depth: np.ndarray
    triangle_ids: np.ndarray
    normals: np.ndarray
    roi: Roi

    def surface(self) -> np.ndarray:
        return self.triangle_ids >= 0

    def is_empty(self) -> bool:
        return not np.any(self.triangle_ids >= 0)

    def at(self, x: int, y: int) -> float:
        """Depth at image pixel (x, y); BACKGROUND_DEPTH outside the window"""
        col, row = x - self.roi.x0, y - self.roi.y0
        if 0 <= col < self.roi.width and 0 <= row < self.roi.height:
            return float(self.depth[row, col])
        return BACKGROUND_DEPTH

    def lookup(self, u: float, v: float, radius: int = 0) -> Optional[float]:
        """
        Depth of the surface pixel nearest to (u, v) within a square search radius

        Returns:
            depth in meters, or None when no surface pixel is in reach
        """
        cx, cy = int(round(u)), int(round(v))
        x0 = max(cx - radius - self.roi.x0, 0)
        y0 = max(cy - radius - self.roi.y0, 0)
        x1 = min(cx + radius + 1 - self.roi.x0, self.roi.width)
        y1 = min(cy + radius + 1 - self.roi.y0, self.roi.height)
        if x1 <= x0 or y1 <= y0:
            return None
        window = self.triangle_ids[y0:y1, x0:x1] >= 0
        if not np.any(window):
            return None
        rows, cols = np.nonzero(window)
        px = cols + x0 + self.roi.x0
        py = rows + y0 + self.roi.y0
        nearest = int(np.argmin((px - u) ** 2 + (py - v) ** 2))
        return float(self.depth[rows[nearest] + y0, cols[nearest] + x0])


@dataclass(frozen=True, eq=False)
class TemplateImage:
    """
    Signed edge-expectation image over roi

    values[y, x] is scaled to max |value| = 1; peak is the unscaled maximum
    and mask the edge mask the template was filtered from.
    """
    values: np.ndarray
    roi: Roi
    mask: Optional[np.ndarray] = None
    peak: float = 1.0


def full_image_roi(K: CameraIntrinsics) -> Roi:
    return Roi(0, 0, K.width, K.height)


def rasterize(mesh: Mesh, pose: Pose, K: CameraIntrinsics, roi: Optional[Roi] = None) -> DepthMap:
    """
    Z-buffer every triangle of the mesh into a window

    Pixel (x, y) is sampled at (u, v) = (x, y). Coverage uses double-precision
    edge functions with a top-left fill rule; an edge shared by two triangles
    is evaluated from the same endpoint in both, so its pixels go to exactly
    one of them. Depth is interpolated perspective-correctly as
    1 / sum(lambda_i / z_i).

    Args:
        mesh: Triangle mesh in the object frame
        pose: Object to camera transform
        K: Camera intrinsics
        roi: Window to render, defaults to the full image

    Returns:
        DepthMap covering roi
    """
    roi = roi or full_image_roi(K)
    depth = np.full((roi.height, roi.width), BACKGROUND_DEPTH)
    ids = np.full((roi.height, roi.width), -1, dtype=np.int64)
    camera = pose.transform_points(mesh.vertices)
    corners = camera[mesh.triangles]
    normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    lengths = np.linalg.norm(normals, axis=1)
    normals = normals / np.where(lengths > 0, lengths, 1.0)[:, None]

    front = np.all(corners[:, :, 2] > NEAR_PLANE, axis=1)
    if not np.any(front) or roi.is_empty():
        return DepthMap(depth, ids, normals, roi)
    pixels = np.full((len(mesh.vertices), 2), np.nan)
    visible = camera[:, 2] > NEAR_PLANE
    pixels[visible] = project_points(camera[visible], K)

    for index in np.flatnonzero(front):
        tri = mesh.triangles[index]
        p = pixels[tri]
        z = camera[tri, 2]
        area = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[1][1] - p[0][1]) * (p[2][0] - p[0][0])
        if area == 0.0:
            continue
        if area < 0:
            p, z, area = p[[0, 2, 1]], z[[0, 2, 1]], -area
        x0 = max(int(math.ceil(p[:, 0].min())), roi.x0)
        x1 = min(int(math.floor(p[:, 0].max())), roi.x1 - 1)
        y0 = max(int(math.ceil(p[:, 1].min())), roi.y0)
        y1 = min(int(math.floor(p[:, 1].max())), roi.y1 - 1)
        if x1 < x0 or y1 < y0:
            continue
        xs = np.arange(x0, x1 + 1, dtype=np.float64)
        ys = np.arange(y0, y1 + 1, dtype=np.float64)
        inside = np.ones((len(ys), len(xs)), dtype=bool)
        plane = np.zeros(3)
        # edge i is opposite vertex i
        for i, (a, b) in enumerate(((p[1], p[2]), (p[2], p[0]), (p[0], p[1]))):
            coefficients, owns = _edge_coefficients(a, b)
            inside &= _covers(_edge_values(coefficients, xs, ys), owns)
            plane += coefficients / z[i]
        if not np.any(inside):
            continue
        plane /= area
        inverse_z = _edge_values(plane, xs, ys)
        with np.errstate(divide='ignore'):
            candidate = np.where(inside, 1.0 / inverse_z, BACKGROUND_DEPTH)
        rows = slice(y0 - roi.y0, y1 - roi.y0 + 1)
        cols = slice(x0 - roi.x0, x1 - roi.x0 + 1)
        closer = inside & (candidate < depth[rows, cols])
        depth[rows, cols][closer] = candidate[closer]
        ids[rows, cols][closer] = index
    return DepthMap(depth, ids, normals, roi)


def _edge_coefficients(a, b) -> Tuple[np.ndarray, bool]:
    """
    Affine form (A, B, C) of the edge function (b - a) x (p - a) and whether the edge owns its line

    The coefficients are built from the lexicographically smaller endpoint and
    negated for the reversed direction, so the two triangles sharing an edge
    get bit-identical values of opposite sign.
    """
    reverse = (a[0], a[1]) > (b[0], b[1])
    lo, hi = (b, a) if reverse else (a, b)
    A = -(hi[1] - lo[1])
    B = hi[0] - lo[0]
    C = -(A * lo[0] + B * lo[1])
    coefficients = np.array([A, B, C], dtype=np.float64)
    if reverse:
        coefficients = -coefficients
    # top-left rule for a positive-area triangle in y-down image coordinates
    dx, dy = b[0] - a[0], b[1] - a[1]
    return coefficients, bool(dy < 0 or (dy == 0 and dx > 0))


def _edge_values(coefficients: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    A, B, C = coefficients
    return (A * xs)[None, :] + (B * ys + C)[:, None]


def _covers(w: np.ndarray, owns: bool) -> np.ndarray:
    return w >= 0 if owns else w > 0


def render_depth(mesh: Mesh, pose: Pose, K: CameraIntrinsics, roi: Optional[Roi] = None) -> DepthMap:
    """Depth map at the given pose; an object behind the camera gives an all-background map"""
    depth_map = rasterize(mesh, pose, K, roi)
    if depth_map.is_empty():
        logger.debug("Rendered depth map is empty")
    return depth_map


def edge_mask(depth_map: DepthMap, crease_angle_deg: float = 30.0, depth_jump: float = 0.01) -> np.ndarray:
    """
    Geometric edges of a rendered surface

    For every pair of 4-neighbours that straddle the silhouette, a crease
    sharper than crease_angle_deg or a depth step above depth_jump, the
    nearer pixel of the pair is marked.

    Returns:
        bool array shaped like the depth map
    """
    depth, ids, normals = depth_map.depth, depth_map.triangle_ids, depth_map.normals
    mask = np.zeros(ids.shape, dtype=bool)
    cos_crease = math.cos(math.radians(crease_angle_deg))
    # normal cosines between the triangles present in the window
    present, local = np.unique(ids, return_inverse=True)
    local = local.reshape(ids.shape)
    faces = normals[np.maximum(present, 0)] if len(normals) else np.zeros((len(present), 3))
    cosines = faces @ faces.T
    for a, b in (((slice(None), slice(None, -1)), (slice(None), slice(1, None))),
                 ((slice(None, -1), slice(None)), (slice(1, None), slice(None)))):
        ia, ib = ids[a], ids[b]
        da, db = depth[a], depth[b]
        on_a, on_b = ia >= 0, ib >= 0
        both = on_a & on_b
        dot = cosines[local[a], local[b]]
        with np.errstate(invalid='ignore'):
            step = np.abs(da - db) > depth_jump
        boundary = (on_a != on_b) | (both & (ia != ib) & (dot < cos_crease)) | (both & step)
        a_nearer = da <= db
        mask[a] |= boundary & a_nearer
        mask[b] |= boundary & ~a_nearer
    return mask


def render_edges(mesh: Mesh, pose: Pose, K: CameraIntrinsics, roi: Optional[Roi] = None,
                 crease_angle_deg: float = 30.0, depth_jump: float = 0.01) -> np.ndarray:
    return edge_mask(rasterize(mesh, pose, K, roi), crease_angle_deg, depth_jump)


def template_roi(mesh: Mesh, pose: Pose, K: CameraIntrinsics, dilation: float = 0.2,
                 min_margin: int = 0) -> Roi:
    """
    Projected bounding box of the mesh grown by dilation (split over both sides)

    Raises:
        ObjectNotVisibleError: if no vertex lies in front of the camera
    """
    camera = pose.transform_points(mesh.vertices)
    camera = camera[camera[:, 2] > NEAR_PLANE]
    if not len(camera):
        raise ObjectNotVisibleError("object is behind the camera")
    uv = project_points(camera, K)
    x0, y0 = np.floor(uv.min(axis=0)).astype(int)
    x1, y1 = np.ceil(uv.max(axis=0)).astype(int)
    mx = max(int(math.ceil(0.5 * dilation * (x1 - x0))), min_margin)
    my = max(int(math.ceil(0.5 * dilation * (y1 - y0))), min_margin)
    return Roi(int(x0) - mx, int(y0) - my, int(x1 - x0) + 2 * mx + 1, int(y1 - y0) + 2 * my + 1)


def dog_margin(sigma2: float) -> int:
    """Border that keeps the wide Gaussian's support inside a template window"""
    return int(math.ceil(3.0 * sigma2)) + 2


def edge_template(mask: np.ndarray, roi: Roi, sigma1: float = 1.0, sigma2: float = 2.5) -> TemplateImage:
    """Sobel magnitude of an edge mask filtered by G(sigma1) - G(sigma2), scaled to max |value| = 1"""
    image = mask.astype(np.float64)
    gx = cv2.Sobel(image, cv2.CV_64F, 1, 0, ksize=3, borderType=cv2.BORDER_CONSTANT)
    gy = cv2.Sobel(image, cv2.CV_64F, 0, 1, ksize=3, borderType=cv2.BORDER_CONSTANT)
    magnitude = np.sqrt(gx * gx + gy * gy)
    narrow = cv2.GaussianBlur(magnitude, (0, 0), sigma1, borderType=cv2.BORDER_CONSTANT)
    wide = cv2.GaussianBlur(magnitude, (0, 0), sigma2, borderType=cv2.BORDER_CONSTANT)
    dog = narrow - wide
    peak = float(np.abs(dog).max()) if dog.size else 0.0
    if peak > 0:
        dog /= peak
    return TemplateImage(dog, roi, mask, peak if peak > 0 else 1.0)


def render_template(mesh: Mesh, pose: Pose, K: CameraIntrinsics, roi: Roi, sigma1: float = 1.0,
                    sigma2: float = 2.5, crease_angle_deg: float = 30.0,
                    depth_jump: float = 0.01) -> TemplateImage:
    """
    Render the signed edge-expectation template of the mesh at a pose

    Args:
        mesh: Triangle mesh
        pose: Hypothesis pose
        K: Camera intrinsics
        roi: Window the template covers
        sigma1, sigma2: DoG standard deviations in pixels, sigma1 < sigma2
        crease_angle_deg: Face-normal angle above which a crease is an edge
        depth_jump: Depth step (meters) above which neighbours form an edge

    Returns:
        TemplateImage over roi

    Raises:
        ObjectNotVisibleError: silhouette empty inside roi
    """
    depth_map = rasterize(mesh, pose, K, roi)
    if depth_map.is_empty():
        raise ObjectNotVisibleError(f"object not visible in roi {roi}")
    mask = edge_mask(depth_map, crease_angle_deg, depth_jump)
    return edge_template(mask, roi, sigma1, sigma2)
