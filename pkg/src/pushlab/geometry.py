"""SE(2) poses, convex polygons, rasterization and mask IoU.

Conventions used throughout the package:

* Points are ``(x, y)`` in workspace cells; 1 cell is 2 mm.
* Grids are numpy arrays indexed ``[y, x]``; cell ``(x, y)`` has its center
  at ``(x + 0.5, y + 0.5)``.
* Polygons are ``(N, 2)`` float arrays, convex, counter-clockwise (positive
  signed area), without a repeated closing vertex.
* Bit masks are boolean ``(h, w)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import ConvexHull

WORKSPACE = 224
TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    w = math.remainder(theta, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)

    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return np.array([[c, -s], [s, c]])


IDENTITY = Pose2(0.0, 0.0, 0.0)
# Every push is mapped to this pose before prediction.
NORMALIZED_PUSH = Pose2(40.0, 112.0, 0.0)


def compose(a: Pose2, b: Pose2) -> Pose2:
    """Return ``a * b``: the pose reached by applying ``b`` and then ``a``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    return Pose2(a.x + c * b.x - s * b.y, a.y + s * b.x + c * b.y, a.theta + b.theta)


def invert(p: Pose2) -> Pose2:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return Pose2(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.theta)


def normalization_transform(p: Pose2) -> Pose2:
    """Rigid transform ``T`` with ``compose(T, p) == NORMALIZED_PUSH``."""
    return compose(NORMALIZED_PUSH, invert(p))


def transform_points(pose: Pose2, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    return pts @ pose.rotation().T + np.array([pose.x, pose.y])


def rotate_vector(theta: float, v) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    v = np.asarray(v, dtype=float)
    return np.stack([c * v[..., 0] - s * v[..., 1], s * v[..., 0] + c * v[..., 1]], axis=-1)


def poses_close(a: Pose2, b: Pose2, tol: float = 1e-9) -> bool:
    return (
        abs(a.x - b.x) <= tol
        and abs(a.y - b.y) <= tol
        and abs(wrap_angle(a.theta - b.theta)) <= tol
    )


# --------------------------------------------------------------------------
# polygons


def signed_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def polygon_area(poly) -> float:
    return abs(signed_area(poly))


def polygon_centroid(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    cross = p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]
    a = cross.sum() / 2.0
    if abs(a) < 1e-12:
        return p.mean(axis=0)
    cx = np.sum((p[:, 0] + q[:, 0]) * cross) / (6.0 * a)
    cy = np.sum((p[:, 1] + q[:, 1]) * cross) / (6.0 * a)
    return np.array([cx, cy])


def convex_hull(points) -> np.ndarray:
    """Counter-clockwise convex hull of a point cloud."""
    pts = np.asarray(points, dtype=float)
    hull = ConvexHull(pts)
    return pts[hull.vertices]


def make_polygon(vertices) -> np.ndarray:
    """Validate vertices as a convex polygon and return them counter-clockwise."""
    poly = np.asarray(vertices, dtype=float)
    if poly.ndim != 2 or poly.shape[1] != 2 or len(poly) < 3:
        raise ValueError("a polygon needs at least 3 two-dimensional vertices")
    area = signed_area(poly)
    if abs(area) < 1e-12:
        raise ValueError("degenerate polygon (zero area)")
    if area < 0:
        poly = poly[::-1].copy()
    if not is_convex(poly):
        raise ValueError("polygon is not convex")
    return poly


def is_convex(poly) -> bool:
    p = np.asarray(poly, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    en = np.roll(e, -1, axis=0)
    cross = e[:, 0] * en[:, 1] - e[:, 1] * en[:, 0]
    return bool(np.all(cross >= -1e-9) or np.all(cross <= 1e-9))


def edge_normals(poly) -> np.ndarray:
    """Unit outward normals of a counter-clockwise polygon, one per edge."""
    p = np.asarray(poly, dtype=float)
    e = np.roll(p, -1, axis=0) - p
    n = np.stack([e[:, 1], -e[:, 0]], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def min_width(poly) -> float:
    """Smallest caliper width of a convex polygon."""
    p = np.asarray(poly, dtype=float)
    proj = p @ edge_normals(p).T
    return float(np.min(proj.max(axis=0) - proj.min(axis=0)))


def extent_along(poly, axis) -> float:
    proj = np.asarray(poly, dtype=float) @ np.asarray(axis, dtype=float)
    return float(proj.max() - proj.min())


def rectangle(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def regular_polygon(n: int, radius: float, phase: float = 0.0) -> np.ndarray:
    a = phase + np.arange(n) * TWO_PI / n
    return np.stack([radius * np.cos(a), radius * np.sin(a)], axis=1)


def clip_convex(subject, clip) -> np.ndarray:
    """Intersection of two convex polygons (Sutherland-Hodgman).

    Returns an empty ``(0, 2)`` array when the intersection has no area.
    """
    out = [tuple(v) for v in np.asarray(subject, dtype=float)]
    c = np.asarray(clip, dtype=float)
    for i in range(len(c)):
        if not out:
            break
        ax, ay = c[i]
        bx, by = c[(i + 1) % len(c)]
        ex, ey = bx - ax, by - ay
        inp = out
        out = []
        sp = inp[-1]
        s_in = ex * (sp[1] - ay) - ey * (sp[0] - ax) >= 0
        for cp in inp:
            c_side = ex * (cp[1] - ay) - ey * (cp[0] - ax)
            c_in = c_side >= 0
            if c_in != s_in:
                s_side = ex * (sp[1] - ay) - ey * (sp[0] - ax)
                t = s_side / (s_side - c_side)
                out.append((sp[0] + t * (cp[0] - sp[0]), sp[1] + t * (cp[1] - sp[1])))
            if c_in:
                out.append(cp)
            sp, s_in = cp, c_in
    if len(out) < 3:
        return np.zeros((0, 2))
    res = np.array(out)
    if polygon_area(res) < 1e-12:
        return np.zeros((0, 2))
    return res


def polygon_iou(a, b) -> float:
    """Analytic intersection-over-union of two convex polygons."""
    inter = clip_convex(a, b)
    ia = polygon_area(inter) if len(inter) else 0.0
    union = polygon_area(a) + polygon_area(b) - ia
    return ia / union if union > 0 else 1.0


# --------------------------------------------------------------------------
# separating axis test


class Mtv(NamedTuple):
    """Minimum translation vector: move polygon ``a`` by ``axis * depth``."""

    axis: np.ndarray
    depth: float


def sat_mtv(a, b) -> Optional[Mtv]:
    """Separating-axis test between two convex polygons.

    Returns ``None`` when the polygons are disjoint, otherwise the smallest
    translation of ``a`` (direction pointing from ``b`` toward ``a``) that
    separates them. Touching polygons give ``depth == 0``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    axes = np.concatenate([edge_normals(a), edge_normals(b)])
    pa = a @ axes.T
    pb = b @ axes.T
    amin, amax = pa.min(axis=0), pa.max(axis=0)
    bmin, bmax = pb.min(axis=0), pb.max(axis=0)
    if np.any(amax < bmin) or np.any(bmax < amin):
        return None
    # moving a along +axis needs bmax - amin, along -axis needs amax - bmin
    plus = bmax - amin
    minus = amax - bmin
    depths = np.minimum(plus, minus)
    k = int(np.argmin(depths))
    axis = axes[k] if plus[k] <= minus[k] else -axes[k]
    return Mtv(axis=axis.copy(), depth=max(float(depths[k]), 0.0))


def aabb(poly) -> tuple[float, float, float, float]:
    p = np.asarray(poly)
    return float(p[:, 0].min()), float(p[:, 1].min()), float(p[:, 0].max()), float(p[:, 1].max())


def aabb_overlap(a, b, margin: float = 0.0) -> bool:
    return not (
        a[2] + margin < b[0] or b[2] + margin < a[0] or a[3] + margin < b[1] or b[3] + margin < a[1]
    )


# --------------------------------------------------------------------------
# rasterization


def points_in_convex(poly, pts) -> np.ndarray:
    """Boolean mask of which points lie inside (or on) a CCW convex polygon."""
    p = np.asarray(poly, dtype=float)
    pts = np.asarray(pts, dtype=float)
    inside = np.ones(pts.shape[:-1], dtype=bool)
    for i in range(len(p)):
        ax, ay = p[i]
        bx, by = p[(i + 1) % len(p)]
        inside &= (bx - ax) * (pts[..., 1] - ay) - (by - ay) * (pts[..., 0] - ax) >= 0
    return inside


def rasterize(poly, w: int = WORKSPACE, h: int = WORKSPACE) -> np.ndarray:
    """Set every cell whose center lies inside the polygon."""
    mask = np.zeros((h, w), dtype=bool)
    x0, y0, x1, y1 = aabb(poly)
    cx0 = max(int(math.floor(x0 - 0.5)), 0)
    cy0 = max(int(math.floor(y0 - 0.5)), 0)
    cx1 = min(int(math.ceil(x1 - 0.5)), w - 1)
    cy1 = min(int(math.ceil(y1 - 0.5)), h - 1)
    if cx1 < cx0 or cy1 < cy0:
        return mask
    xs = np.arange(cx0, cx1 + 1) + 0.5
    ys = np.arange(cy0, cy1 + 1) + 0.5
    gx, gy = np.meshgrid(xs, ys)
    mask[cy0 : cy1 + 1, cx0 : cx1 + 1] = points_in_convex(poly, np.stack([gx, gy], axis=-1))
    return mask


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a & b| / |a | b|, with two empty masks scoring 1."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def cell_centers(mask: np.ndarray) -> np.ndarray:
    """Continuous ``(x, y)`` centers of the set cells of a mask."""
    ys, xs = np.nonzero(mask)
    return np.stack([xs + 0.5, ys + 0.5], axis=1)


def mask_centroid(mask: np.ndarray) -> np.ndarray:
    ys, xs = np.nonzero(mask)
    return np.array([xs.mean() + 0.5, ys.mean() + 0.5])


def warp_mask(
    mask: np.ndarray,
    pose: Pose2,
    center,
    out_shape: Optional[tuple[int, int]] = None,
) -> np.ndarray:
    """Move a mask rigidly: rotate by ``pose.theta`` about ``center``, then
    translate by ``(pose.x, pose.y)``.

    Target cells are inverse-mapped into the source and the bilinearly
    interpolated occupancy is thresholded at 0.5, which keeps integer
    translations exact. Cells falling outside the output are clipped.
    """
    h, w = out_shape if out_shape is not None else mask.shape
    out = np.zeros((h, w), dtype=bool)
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return out
    center = np.asarray(center, dtype=float)
    corners = np.array(
        [[xs.min(), ys.min()], [xs.max() + 1, ys.min()], [xs.max() + 1, ys.max() + 1], [xs.min(), ys.max() + 1]],
        dtype=float,
    )
    moved = rotate_vector(pose.theta, corners - center) + center + np.array([pose.x, pose.y])
    bx0 = max(int(math.floor(moved[:, 0].min())) - 1, 0)
    by0 = max(int(math.floor(moved[:, 1].min())) - 1, 0)
    bx1 = min(int(math.ceil(moved[:, 0].max())) + 1, w)
    by1 = min(int(math.ceil(moved[:, 1].max())) + 1, h)
    if bx1 <= bx0 or by1 <= by0:
        return out
    gx, gy = np.meshgrid(np.arange(bx0, bx1) + 0.5, np.arange(by0, by1) + 0.5)
    tgt = np.stack([gx, gy], axis=-1) - center - np.array([pose.x, pose.y])
    src = rotate_vector(-pose.theta, tgt) + center
    out[by0:by1, bx0:bx1] = sample_bilinear(mask, src) >= 0.5 - 1e-9
    return out


def sample_bilinear(mask: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear occupancy of a binary grid at continuous points (zero outside)."""
    h, w = mask.shape
    u = pts[..., 0] - 0.5
    v = pts[..., 1] - 0.5
    x0 = np.floor(u).astype(int)
    y0 = np.floor(v).astype(int)
    fx = u - x0
    fy = v - y0
    padded = np.zeros((h + 2, w + 2), dtype=float)
    padded[1:-1, 1:-1] = mask
    xi = np.clip(x0 + 1, 0, w + 1)
    yi = np.clip(y0 + 1, 0, h + 1)
    xj = np.clip(x0 + 2, 0, w + 1)
    yj = np.clip(y0 + 2, 0, h + 1)
    return (
        padded[yi, xi] * (1 - fx) * (1 - fy)
        + padded[yi, xj] * fx * (1 - fy)
        + padded[yj, xi] * (1 - fx) * fy
        + padded[yj, xj] * fx * fy
    )


def sample_nearest(grid: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Value of the cell containing each continuous point (zero outside)."""
    h, w = grid.shape
    xi = np.floor(pts[..., 0]).astype(int)
    yi = np.floor(pts[..., 1]).astype(int)
    ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
    out = np.zeros(pts.shape[:-1], dtype=grid.dtype)
    out[ok] = grid[yi[ok], xi[ok]]
    return out
