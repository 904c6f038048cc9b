"""Candidate pushes along bundle contours and the grasp candidate grid."""

from __future__ import annotations

import math

import numpy as np
from scipy import ndimage
from skimage import measure

from .geometry import Pose2, cell_centers, rasterize, signed_area, transform_points
from .physics import DEFAULT_GRIPPER, GRASP_ANGLES, PUSH_DISTANCE, GraspAction, GripperModel, PushAction
from .scene import Observation

CONTACT_GAP = 1.5
GRASP_BAND = 16.0


def _outer_contour(region: np.ndarray) -> np.ndarray:
    """Largest closed boundary of a binary region as continuous (x, y) points."""
    padded = np.pad(region.astype(float), 1)
    contours = measure.find_contours(padded, 0.5)
    best, best_area = None, -1.0
    for c in contours:
        pts = np.stack([c[:, 1] - 1 + 0.5, c[:, 0] - 1 + 0.5], axis=1)
        a = abs(signed_area(pts))
        if a > best_area:
            best, best_area = pts, a
    return best


def _resample(contour: np.ndarray, spacing: float) -> np.ndarray:
    closed = np.vstack([contour, contour[:1]])
    seg = np.linalg.norm(np.diff(closed, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total <= 0:
        return contour[:1]
    s = np.arange(0.0, total - 1e-9, spacing)
    x = np.interp(s, cum, closed[:, 0])
    y = np.interp(s, cum, closed[:, 1])
    return np.stack([x, y], axis=1)


def _clearance(fg_pts: np.ndarray, face: np.ndarray, theta: float, half_width: float) -> float:
    """Free travel of a pusher face (center ``face``) along ``theta``."""
    c, s = math.cos(theta), math.sin(theta)
    rel = fg_pts - face
    u = rel[:, 0] * c + rel[:, 1] * s
    v = -rel[:, 0] * s + rel[:, 1] * c
    hit = (np.abs(v) <= half_width + 0.71) & (u > -0.71)
    if not np.any(hit):
        return math.inf
    return float(u[hit].min())


def push_is_feasible(fg: np.ndarray, push: PushAction, grip: GripperModel = DEFAULT_GRIPPER) -> bool:
    """Start footprint fully inside the workspace and clear of every object."""
    h, w = fg.shape
    poly = push.footprint(grip)
    if poly[:, 0].min() < 0 or poly[:, 1].min() < 0 or poly[:, 0].max() > w or poly[:, 1].max() > h:
        return False
    return not np.any(rasterize(poly, w, h) & fg)


def sample_pushes(
    obs: Observation,
    spacing: float = 10.0,
    distance: float = PUSH_DISTANCE,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> list[PushAction]:
    """Pushes aimed at bundle centroids from points on the bundle outlines.

    Bundles are the connected components of the foreground dilated by the
    pusher half-width, so gaps narrower than the pusher never receive a
    candidate. Each sample point is the center of the pusher's front face;
    the face is then advanced to just short of contact.
    """
    fg = np.zeros(obs.color.shape, dtype=bool)
    for inst in obs.instances:
        fg |= inst.mask
    if not fg.any():
        return []
    half = grip.pusher_width / 2.0
    dist = ndimage.distance_transform_edt(~fg)
    labels, n = ndimage.label(dist <= half)
    fg_pts = cell_centers(fg)
    fg_labels = labels[fg]
    pushes = []
    for lab in range(1, n + 1):
        region = labels == lab
        centroid = fg_pts[fg_labels == lab].mean(axis=0)
        for q in _resample(_outer_contour(region), spacing):
            d = centroid - q
            if np.hypot(*d) < 1e-9:
                continue
            theta = math.atan2(d[1], d[0])
            free = _clearance(fg_pts, q, theta, half)
            advance = min(max(free - CONTACT_GAP, 0.0), half) if math.isfinite(free) else 0.0
            face = q + advance * np.array([math.cos(theta), math.sin(theta)])
            start = transform_points(Pose2(face[0], face[1], theta), [[-grip.pusher_depth, 0.0]])[0]
            push = PushAction(Pose2(float(start[0]), float(start[1]), theta), distance)
            if push_is_feasible(fg, push, grip):
                pushes.append(push)
    return pushes


def grasp_grid(obs: Observation, stride: int = 4, band: float = GRASP_BAND) -> np.ndarray:
    """Candidate grasps as an ``(N, 3)`` array of ``(x, y, angle index)``.

    Centers lie on a ``stride`` lattice of cell centers within ``band`` cells
    of the foreground; every center is crossed with all 16 orientations.
    """
    fg = obs.foreground
    if not fg.any():
        return np.zeros((0, 3))
    dist = ndimage.distance_transform_edt(~fg)
    h, w = fg.shape
    ys, xs = np.mgrid[0:h:stride, 0:w:stride]
    keep = dist[ys, xs] <= band
    cx = xs[keep] + 0.5
    cy = ys[keep] + 0.5
    k = np.arange(len(GRASP_ANGLES))
    return np.stack(
        [np.repeat(cx, len(k)), np.repeat(cy, len(k)), np.tile(k, len(cx))], axis=1
    ).astype(float)


def grid_to_actions(grid: np.ndarray) -> list[GraspAction]:
    return [GraspAction(Pose2(x, y, GRASP_ANGLES[int(k)])) for x, y, k in grid]


def enumerate_grasps(obs: Observation, stride: int = 4, band: float = GRASP_BAND) -> list[GraspAction]:
    return grid_to_actions(grasp_grid(obs, stride, band))
