"""Deterministic quasi-static push simulation and geometric grasp adjudication.

This engine is the ground truth for every training label and evaluation in
the package. It is not a friction model: the pusher is advanced one cell at a
time and every resulting penetration is resolved along its minimum
translation vector, with a torque-like rotation term that couples off-center
contacts to rotation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .geometry import (
    TWO_PI,
    Pose2,
    aabb,
    aabb_overlap,
    clip_convex,
    extent_along,
    polygon_area,
    polygon_centroid,
    rectangle,
    sat_mtv,
    transform_points,
    wrap_angle,
)
from .scene import Body, Scene, render, scene_from_dict, scene_to_dict

log = logging.getLogger(__name__)

PUSH_DISTANCE = 25.0
RELAX_ITERATIONS = 50
CONTACT_EPS = 1e-9
GRASP_ANGLES = tuple(wrap_angle(k * TWO_PI / 16) for k in range(16))
MIN_PINCH = 4.0
# max angle between a finger's closing direction and the contact normal
GRASP_CONE = math.radians(25.0)
# a finger may brush an object this deep without colliding: half a cell,
# finer than anything the rendered image can show
FINGER_TOLERANCE = 0.5


@dataclass(frozen=True)
class GripperModel:
    stroke: float = 34.0
    finger_thickness: float = 5.0
    finger_length: float = 24.0
    # pusher footprint: width across the push direction, depth along it
    pusher_width: float = 24.0
    pusher_depth: float = 25.0

    def __post_init__(self):
        if self.stroke <= self.finger_thickness:
            raise ValueError("stroke must exceed finger thickness")

    def pusher_local(self) -> np.ndarray:
        hw = self.pusher_width / 2.0
        return rectangle(0.0, -hw, self.pusher_depth, hw)

    def fingers_local(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.stroke / 2.0
        t = self.finger_thickness / 2.0
        hl = self.finger_length / 2.0
        return rectangle(c - t, -hl, c + t, hl), rectangle(-c - t, -hl, -c + t, hl)

    def closing_local(self) -> np.ndarray:
        inner = self.stroke / 2.0 - self.finger_thickness / 2.0
        hl = self.finger_length / 2.0
        return rectangle(-inner, -hl, inner, hl)


DEFAULT_GRIPPER = GripperModel()


@dataclass(frozen=True)
class PushAction:
    start: Pose2
    distance: float = PUSH_DISTANCE

    def __post_init__(self):
        if self.distance < 0:
            raise ValueError("push distance must be non-negative")

    def footprint(self, grip: GripperModel = DEFAULT_GRIPPER) -> np.ndarray:
        """Pusher polygon at the start of the push."""
        return transform_points(self.start, grip.pusher_local())


@dataclass(frozen=True)
class GraspAction:
    center: Pose2


@dataclass
class PushOutcome:
    transforms: list[Pose2]
    final_scene: Scene
    exited: set[int]
    jammed: bool = False
    # every object that took part in contact relaxation
    contacted: set[int] = field(default_factory=set)


class GraspResult(NamedTuple):
    kind: str  # "success" | "finger_collision" | "miss"
    ids: tuple[int, ...] = ()

    @property
    def success(self) -> bool:
        return self.kind == "success"


def displacement(before: Pose2, after: Pose2) -> Pose2:
    return Pose2(after.x - before.x, after.y - before.y, after.theta - before.theta)


def apply_displacement(pose: Pose2, d: Pose2) -> Pose2:
    return Pose2(pose.x + d.x, pose.y + d.y, pose.theta + d.theta)


class _Sim:
    """Mutable working state for one push."""

    def __init__(self, scene: Scene):
        self.shapes = [b.spec.shape for b in scene.bodies]
        self.mass = [b.spec.mass for b in scene.bodies]
        self.k_rot = [1.0 / (1.0 + b.spec.friction * b.spec.mass) for b in scene.bodies]
        self.pos = [np.array([b.pose.x, b.pose.y]) for b in scene.bodies]
        self.theta = [b.pose.theta for b in scene.bodies]
        self.polys = [self._poly(i) for i in range(len(self.shapes))]
        self.boxes = [aabb(p) for p in self.polys]

    def _poly(self, i):
        c, s = math.cos(self.theta[i]), math.sin(self.theta[i])
        return self.shapes[i] @ np.array([[c, s], [-s, c]]) + self.pos[i]

    def move(self, i, shift, contact_poly):
        """Translate body i by ``shift`` and rotate it about its centroid."""
        self.pos[i] = self.pos[i] + shift
        if len(contact_poly):
            r = polygon_centroid(contact_poly) - self.pos[i]
            r2 = max(float(r @ r), 1.0)
            torque = r[0] * shift[1] - r[1] * shift[0]
            self.theta[i] += self.k_rot[i] * torque / r2
        self.polys[i] = self._poly(i)
        self.boxes[i] = aabb(self.polys[i])


def simulate_push(
    scene: Scene,
    action: PushAction,
    grip: GripperModel = DEFAULT_GRIPPER,
    max_iter: int = RELAX_ITERATIONS,
) -> PushOutcome:
    """Execute a push and return per-object displacements and the final scene."""
    sim = _Sim(scene)
    n = len(scene.bodies)
    contacted: set[int] = set()
    jammed = False
    steps = int(math.ceil(action.distance - 1e-12))
    step_len = action.distance / steps if steps else 0.0
    direction = np.array([math.cos(action.start.theta), math.sin(action.start.theta)])
    local = grip.pusher_local()
    for k in range(1, steps + 1):
        start = action.start
        pusher_pose = Pose2(start.x + direction[0] * step_len * k, start.y + direction[1] * step_len * k, start.theta)
        pusher = transform_points(pusher_pose, local)
        pbox = aabb(pusher)
        level: dict[int, int] = {}
        dirty: set[int] = set()
        converged = False
        for _ in range(max_iter):
            changed = False
            for i in range(n):
                if not aabb_overlap(pbox, sim.boxes[i]):
                    continue
                m = sat_mtv(sim.polys[i], pusher)
                if m is None or m.depth <= CONTACT_EPS:
                    continue
                contact = clip_convex(sim.polys[i], pusher)
                sim.move(i, m.axis * m.depth, contact)
                level[i] = 1
                dirty.add(i)
                contacted.add(i)
                changed = True
            for i in sorted(dirty):
                for j in range(n):
                    if j == i or (j in dirty and j < i):
                        continue
                    if not aabb_overlap(sim.boxes[i], sim.boxes[j]):
                        continue
                    m = sat_mtv(sim.polys[j], sim.polys[i])
                    if m is None or m.depth <= CONTACT_EPS:
                        continue
                    li, lj = level.get(i, n + 2), level.get(j, n + 2)
                    if lj > li or (lj == li and (sim.mass[j], j) <= (sim.mass[i], i)):
                        mover, other, shift = j, i, m.axis * m.depth
                    else:
                        mover, other, shift = i, j, -m.axis * m.depth
                    contact = clip_convex(sim.polys[mover], sim.polys[other])
                    sim.move(mover, shift, contact)
                    level[mover] = min(level.get(mover, n + 2), level.get(other, n + 2) + 1)
                    dirty.add(mover)
                    contacted.update((i, j))
                    changed = True
            if not changed:
                converged = True
                break
        if not converged:
            jammed = True
    if jammed:
        log.info("push %s jammed; projecting out remaining penetration", action)
        _project_out(sim)
    final_poses = [Pose2(float(p[0]), float(p[1]), t) for p, t in zip(sim.pos, sim.theta)]
    transforms = [displacement(b.pose, p) for b, p in zip(scene.bodies, final_poses)]
    final = scene.with_poses(final_poses)
    exited = {i for i, p in enumerate(final_poses) if not (0 <= p.x < scene.size and 0 <= p.y < scene.size)}
    return PushOutcome(transforms, final, exited, jammed, contacted)


def _project_out(sim: _Sim, max_iter: int = 200) -> None:
    n = len(sim.polys)
    for _ in range(max_iter):
        changed = False
        for i in range(n):
            for j in range(i + 1, n):
                if not aabb_overlap(sim.boxes[i], sim.boxes[j]):
                    continue
                m = sat_mtv(sim.polys[j], sim.polys[i])
                if m is None or m.depth <= CONTACT_EPS:
                    continue
                half = m.axis * (m.depth / 2.0)
                sim.move(j, half, ())
                sim.move(i, -half, ())
                changed = True
        if not changed:
            return


def _contact_ok(poly: np.ndarray, inside: np.ndarray, direction: np.ndarray) -> bool:
    """Whether a finger closing along ``-direction`` meets the pinched part
    ``inside`` of ``poly`` on a face within the friction cone, or on a vertex."""
    s = inside @ direction
    top = s.max()
    ext = inside[s >= top - 1e-6]
    if len(ext) >= 2:
        return True
    p = ext[0]
    if np.min(np.hypot(*(poly - p).T)) < 1e-6:
        return True
    nxt = np.roll(poly, -1, axis=0)
    for a, b in zip(poly, nxt):
        e = b - a
        length = math.hypot(*e)
        if length == 0:
            continue
        t = float(np.dot(p - a, e)) / length**2
        if -1e-9 <= t <= 1 + 1e-9 and abs(e[0] * (p - a)[1] - e[1] * (p - a)[0]) / length < 1e-6:
            normal = np.array([e[1], -e[0]]) / length  # outward for CCW polygons
            return float(np.dot(normal, direction)) >= math.cos(GRASP_CONE)
    return True


def adjudicate_grasp(scene: Scene, g: GraspAction, grip: GripperModel = DEFAULT_GRIPPER) -> GraspResult:
    """Geometric grasp outcome: collision of either finger (penetration
    beyond ``FINGER_TOLERANCE``), else what the closing fingers would pinch.

    An object is held when its part inside the closing region spans at
    least ``MIN_PINCH`` cells both along the gripper axis and along the
    fingers, its full extent along the axis fits the stroke, and both
    fingers meet it on a vertex or on a face whose normal is within
    ``GRASP_CONE`` of the closing direction (no slipping off corners).
    """
    fingers = [transform_points(g.center, f) for f in grip.fingers_local()]
    closing = transform_points(g.center, grip.closing_local())
    fboxes = [aabb(f) for f in fingers]
    cbox = aabb(closing)
    axis = np.array([math.cos(g.center.theta), math.sin(g.center.theta)])
    across = np.array([-axis[1], axis[0]])
    polys = scene.polygons()
    for poly in polys:
        box = aabb(poly)
        for f, fb in zip(fingers, fboxes):
            if aabb_overlap(fb, box):
                m = sat_mtv(f, poly)
                if m is not None and m.depth > FINGER_TOLERANCE:
                    return GraspResult("finger_collision")
    held = []
    for i, poly in enumerate(polys):
        if not aabb_overlap(cbox, aabb(poly)):
            continue
        inside = clip_convex(poly, closing)
        if not len(inside) or polygon_area(inside) <= 0:
            continue
        pinch = min(extent_along(inside, axis), extent_along(inside, across))
        if pinch < MIN_PINCH or extent_along(poly, axis) > grip.stroke:
            continue
        if _contact_ok(poly, inside, axis) and _contact_ok(poly, inside, -axis):
            held.append(i)
    if held:
        return GraspResult("success", tuple(held))
    return GraspResult("miss")


def remove_objects(scene: Scene, ids: Iterable[int]) -> Scene:
    ids = set(ids)
    bad = [i for i in ids if not 0 <= i < len(scene.bodies)]
    if bad:
        raise ValueError(f"unknown object ids {sorted(bad)}")
    return replace(scene, bodies=tuple(b for i, b in enumerate(scene.bodies) if i not in ids))


# --------------------------------------------------------------------------
# push dataset records


@dataclass
class PushRecord:
    scene_before: Scene
    push: PushAction
    transforms: list[Pose2]
    exited: set[int] = field(default_factory=set)

    def to_dict(self) -> dict:
        return {
            "scene_before": scene_to_dict(self.scene_before),
            "push": {
                "x": self.push.start.x,
                "y": self.push.start.y,
                "theta_deg": math.degrees(self.push.start.theta),
                "distance": self.push.distance,
            },
            "transforms": [[t.x, t.y, math.degrees(t.theta)] for t in self.transforms],
            "exited": sorted(self.exited),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PushRecord":
        p = d["push"]
        push = PushAction(Pose2(p["x"], p["y"], math.radians(p["theta_deg"])), p["distance"])
        return cls(
            scene_before=scene_from_dict(d["scene_before"]),
            push=push,
            transforms=[Pose2(x, y, math.radians(t)) for x, y, t in d["transforms"]],
            exited=set(d["exited"]),
        )

    def final_scene(self) -> Scene:
        poses = [apply_displacement(b.pose, t) for b, t in zip(self.scene_before.bodies, self.transforms)]
        return self.scene_before.with_poses(poses)


def record_from_outcome(scene: Scene, push: PushAction, outcome: PushOutcome) -> PushRecord:
    return PushRecord(scene, push, list(outcome.transforms), set(outcome.exited))


def final_masks(scene: Scene, exited: Sequence[int] | set[int] = ()) -> dict[int, np.ndarray]:
    """Mask of every body in the rendered image, keyed by color id; exited
    bodies are empty. Taken from the rendering, like any observation, so a
    boundary cell shared by touching bodies belongs to the one drawn last."""
    color = render(scene).color
    out = {}
    for i, b in enumerate(scene.bodies):
        cid = b.spec.color_id
        out[cid] = np.zeros(color.shape, dtype=bool) if i in exited else color == cid
    return out
