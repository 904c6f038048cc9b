"""Objects, scenes, rendering and color-blob segmentation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import (
    WORKSPACE,
    Pose2,
    aabb,
    aabb_overlap,
    convex_hull,
    make_polygon,
    min_width,
    polygon_area,
    polygon_centroid,
    rasterize,
    rectangle,
    regular_polygon,
    sat_mtv,
    transform_points,
)

MAX_OBJECTS = 30
MIN_INSTANCE_CELLS = 8
CROP_SIZE = 60
# objects must fit between open fingers (stroke 34 minus finger thickness 5)
MAX_GRASP_WIDTH = 28.0
DIAMETER_RANGE = (14.0, 40.0)


class SceneGenerationError(RuntimeError):
    """Raised when random objects cannot be separated within the iteration cap."""


@dataclass(frozen=True)
class ObjectSpec:
    shape: np.ndarray  # body frame, centroid at the origin
    color_id: int
    mass: float = 1.0
    friction: float = 0.5

    def __post_init__(self):
        if self.mass <= 0 or self.friction <= 0:
            raise ValueError("mass and friction must be positive")


@dataclass(frozen=True)
class Body:
    spec: ObjectSpec
    pose: Pose2

    def polygon(self) -> np.ndarray:
        return transform_points(self.pose, self.spec.shape)


@dataclass(frozen=True)
class Scene:
    bodies: tuple[Body, ...] = ()
    size: int = WORKSPACE
    seed: Optional[int] = None

    def __len__(self):
        return len(self.bodies)

    def polygons(self) -> list[np.ndarray]:
        return [b.polygon() for b in self.bodies]

    def color_ids(self) -> list[int]:
        return [b.spec.color_id for b in self.bodies]

    def with_poses(self, poses: Sequence[Pose2]) -> "Scene":
        return replace(self, bodies=tuple(Body(b.spec, p) for b, p in zip(self.bodies, poses)))


@dataclass
class Instance:
    mask: np.ndarray
    center: np.ndarray  # continuous (x, y) of the centroid cell's center
    color_id: int


@dataclass
class Observation:
    color: np.ndarray  # int16 [h, w], 0 = background
    height: np.ndarray  # float [h, w]
    instances: list[Instance] = field(default_factory=list)

    @property
    def foreground(self) -> np.ndarray:
        return self.color > 0


def centered_shape(vertices) -> np.ndarray:
    poly = make_polygon(vertices)
    return poly - polygon_centroid(poly)


def make_object(vertices, color_id: int, mass: float = 1.0, friction: float = 0.5) -> ObjectSpec:
    return ObjectSpec(centered_shape(vertices), int(color_id), float(mass), float(friction))


def _diameter(poly) -> float:
    d = poly[:, None, :] - poly[None, :, :]
    return float(np.sqrt((d**2).sum(-1)).max())


def random_shape(rng: np.random.Generator) -> np.ndarray:
    """Draw a body-frame convex shape from the library (gripper compatible)."""
    while True:
        kind = rng.integers(5)
        if kind == 0:
            s = rng.uniform(12, 28)
            poly = rectangle(-s / 2, -s / 2, s / 2, s / 2)
        elif kind == 1:
            w = rng.uniform(10, 20)
            length = rng.uniform(w + 6, 32)
            poly = rectangle(-length / 2, -w / 2, length / 2, w / 2)
        elif kind == 2:
            poly = regular_polygon(3, rng.uniform(16, 28) / math.sqrt(3))
        elif kind == 3:
            poly = regular_polygon(6, rng.uniform(8, 14))
        else:
            leg = rng.uniform(20, 28)
            t = rng.uniform(8, 12)
            poly = convex_hull([[0, 0], [leg, 0], [leg, t], [t, leg], [0, leg]])
        poly = centered_shape(poly)
        d = _diameter(poly)
        if DIAMETER_RANGE[0] <= d <= DIAMETER_RANGE[1] and min_width(poly) <= MAX_GRASP_WIDTH:
            return poly


def default_spread(n_objects: int) -> float:
    return float(min(200.0, 80.0 + 12.0 * n_objects))


def _keep_inside(pose: Pose2, shape: np.ndarray, size: int, margin: float = 1.0) -> Pose2:
    x0, y0, x1, y1 = aabb(transform_points(pose, shape))
    dx = max(margin - x0, 0.0) - max(x1 - (size - margin), 0.0)
    dy = max(margin - y0, 0.0) - max(y1 - (size - margin), 0.0)
    return Pose2(pose.x + dx, pose.y + dy, pose.theta)


def separate(
    specs: Sequence[ObjectSpec],
    poses: list[Pose2],
    size: int = WORKSPACE,
    max_iter: int = 400,
    gap: float = 0.5,
) -> list[Pose2]:
    """Push overlapping objects apart along their MTVs until none interpenetrate."""
    poses = list(poses)
    n = len(poses)
    for _ in range(max_iter):
        polys = [transform_points(p, s.shape) for p, s in zip(poses, specs)]
        boxes = [aabb(p) for p in polys]
        moved = False
        for i in range(n):
            for j in range(i + 1, n):
                if not aabb_overlap(boxes[i], boxes[j], margin=gap):
                    continue
                m = sat_mtv(polys[i], polys[j])
                if m is None:
                    continue
                step = m.axis * (m.depth / 2.0 + gap / 2.0)
                poses[i] = Pose2(poses[i].x + step[0], poses[i].y + step[1], poses[i].theta)
                poses[j] = Pose2(poses[j].x - step[0], poses[j].y - step[1], poses[j].theta)
                polys[i] = transform_points(poses[i], specs[i].shape)
                polys[j] = transform_points(poses[j], specs[j].shape)
                boxes[i], boxes[j] = aabb(polys[i]), aabb(polys[j])
                moved = True
        for i in range(n):
            poses[i] = _keep_inside(poses[i], specs[i].shape, size)
        if not moved:
            return poses
    raise SceneGenerationError(f"could not separate {n} objects in {max_iter} iterations")


def generate_scene(
    n_objects: int,
    seed: int,
    spread: Optional[float] = None,
    size: int = WORKSPACE,
) -> Scene:
    """Randomly drop ``n_objects`` library shapes and relax them apart.

    Objects get distinct color ids ``1..n``. Deterministic in ``seed``.
    """
    if not 1 <= n_objects <= MAX_OBJECTS:
        raise ValueError(f"n_objects must be in [1, {MAX_OBJECTS}], got {n_objects}")
    rng = np.random.default_rng(seed)
    spread = default_spread(n_objects) if spread is None else spread
    specs = []
    poses = []
    lo = (size - spread) / 2.0
    for k in range(n_objects):
        shape = random_shape(rng)
        area = polygon_area(shape)
        specs.append(
            ObjectSpec(
                shape=shape,
                color_id=k + 1,
                mass=float(area / 300.0 * rng.uniform(0.9, 1.1)),
                friction=float(rng.uniform(0.4, 0.6)),
            )
        )
        pose = Pose2(lo + rng.uniform(0, spread), lo + rng.uniform(0, spread), rng.uniform(-math.pi, math.pi))
        poses.append(_keep_inside(pose, shape, size))
    poses = separate(specs, poses, size)
    return Scene(tuple(Body(s, p) for s, p in zip(specs, poses)), size=size, seed=seed)


BLOCK_SHAPES = ((1, 2), (2, 1), (1, 3), (2, 2), (2, 2), (2, 3), (3, 2))


def generate_packed_scene(seed: int, size: int = WORKSPACE, max_loose: int = 3) -> Scene:
    """Tight blocks of squares or bricks plus a few loose library objects.

    Blocks leave no room for fingers between their members, so most of
    their objects cannot be grasped before something is pushed.
    """
    rng = np.random.default_rng(seed)
    gap = 0.5
    shapes, poses = [], []
    for _ in range(int(rng.integers(1, 3))):
        rows, cols = BLOCK_SHAPES[int(rng.integers(len(BLOCK_SHAPES)))]
        h = rng.uniform(26.5, 28.5)
        w = rng.uniform(h, 36) if rng.random() < 0.3 else h
        shape = centered_shape(rectangle(-w / 2, -h / 2, w / 2, h / 2))
        frame = Pose2(rng.uniform(60, size - 60), rng.uniform(60, size - 60), rng.uniform(-math.pi, math.pi))
        for r in range(rows):
            for c in range(cols):
                local = [(c - (cols - 1) / 2) * (w + gap), (r - (rows - 1) / 2) * (h + gap)]
                x, y = transform_points(frame, [local])[0]
                shapes.append(shape)
                poses.append(Pose2(float(x), float(y), frame.theta))
    for _ in range(int(rng.integers(0, max_loose + 1))):
        shapes.append(random_shape(rng))
        poses.append(Pose2(rng.uniform(30, size - 30), rng.uniform(30, size - 30), rng.uniform(-math.pi, math.pi)))
    specs = [
        ObjectSpec(sh, k + 1, mass=float(polygon_area(sh) / 300.0 * rng.uniform(0.9, 1.1)), friction=float(rng.uniform(0.4, 0.6)))
        for k, sh in enumerate(shapes)
    ]
    poses = separate(specs, [_keep_inside(p, s.shape, size) for p, s in zip(poses, specs)], size)
    return Scene(tuple(Body(s, p) for s, p in zip(specs, poses)), size=size, seed=seed)


# --------------------------------------------------------------------------
# rendering and segmentation


def render(scene: Scene) -> Observation:
    color = np.zeros((scene.size, scene.size), dtype=np.int16)
    for body in scene.bodies:
        color[rasterize(body.polygon(), scene.size, scene.size)] = body.spec.color_id
    height = (color > 0).astype(float)
    return Observation(color=color, height=height, instances=segment(color))


_EIGHT = ndimage.generate_binary_structure(2, 2)


def segment(color: np.ndarray) -> list[Instance]:
    """8-connected equal-color blobs, noise blobs dropped, ordered by color id."""
    out = []
    for cid in np.unique(color):
        if cid == 0:
            continue
        labels, n = ndimage.label(color == cid, structure=_EIGHT)
        if n == 0:
            continue
        sizes = np.bincount(labels.ravel())
        for lab in range(1, n + 1):
            if sizes[lab] < MIN_INSTANCE_CELLS:
                continue
            mask = labels == lab
            ys, xs = np.nonzero(mask)
            center = np.array([round(xs.mean()) + 0.5, round(ys.mean()) + 0.5])
            out.append(Instance(mask=mask, center=center, color_id=int(cid)))
    return out


def crop_mask(mask: np.ndarray, center, size: int = CROP_SIZE) -> np.ndarray:
    """``size``x``size`` window of ``mask`` centered on the cell containing
    ``center``, zero padded at the borders."""
    cx, cy = int(math.floor(center[0])), int(math.floor(center[1]))
    half = size // 2
    h, w = mask.shape
    out = np.zeros((size, size), dtype=bool)
    x0, y0 = cx - half, cy - half
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, w), min(y0 + size, h)
    if sx1 > sx0 and sy1 > sy0:
        out[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = mask[sy0:sy1, sx0:sx1]
    if np.count_nonzero(out) < np.count_nonzero(mask):
        ys, xs = np.nonzero(mask)
        if xs.min() < x0 or xs.max() >= x0 + size or ys.min() < y0 or ys.max() >= y0 + size:
            warnings.warn("object mask truncated by the crop window", stacklevel=2)
    return out


# --------------------------------------------------------------------------
# JSON scene files


def scene_to_dict(scene: Scene) -> dict:
    return {
        "seed": scene.seed,
        "objects": [
            {
                "shape": b.spec.shape.tolist(),
                "color_id": b.spec.color_id,
                "mass": b.spec.mass,
                "friction": b.spec.friction,
                "pose": [b.pose.x, b.pose.y, math.degrees(b.pose.theta)],
            }
            for b in scene.bodies
        ],
    }


def scene_from_dict(d: dict, size: int = WORKSPACE) -> Scene:
    bodies = []
    for o in d["objects"]:
        poly = np.asarray(o["shape"], dtype=float)
        spec = ObjectSpec(make_polygon(poly), int(o["color_id"]), float(o["mass"]), float(o["friction"]))
        x, y, deg = o["pose"]
        bodies.append(Body(spec, Pose2(float(x), float(y), math.radians(float(deg)))))
    return Scene(tuple(bodies), size=size, seed=d.get("seed"))


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), indent=1))


def load_scene(path) -> Scene:
    return scene_from_dict(json.loads(Path(path).read_text()))
