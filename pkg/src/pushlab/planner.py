"""One-step lookahead push/grasp planner, episode runner and data collection.

A push is worth the discounted mean grasp score of the image DIPN predicts
after it; it is chosen only when that beats the mean grasp score now.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from . import graspnet as gn
from .evaluation import PredictorHandle, as_predictor
from .geometry import Pose2
from .graspnet import GraspSamples, GraspScorerParams
from .physics import (
    DEFAULT_GRIPPER,
    GRASP_ANGLES,
    PUSH_DISTANCE,
    GraspAction,
    GripperModel,
    PushAction,
    PushRecord,
    adjudicate_grasp,
    record_from_outcome,
    remove_objects,
    simulate_push,
)
from .sampling import grasp_grid, sample_pushes
from .scene import (
    MAX_OBJECTS,
    Body,
    Observation,
    Scene,
    SceneGenerationError,
    generate_packed_scene,
    generate_scene,
    render,
    separate,
)

# farthest cell a grasp window can read, measured from its center
WINDOW_REACH = 32.0


class PlannerError(RuntimeError):
    """No push or grasp candidate exists for a non-empty scene."""


@dataclass
class PlannerConfig:
    gamma: float = 0.9
    grasp_shortcut: float = 0.7
    max_action_factor: int = 3
    push_distance: float = PUSH_DISTANCE
    stride: int = 4
    push_spacing: float = 10.0
    # per-seed perturbation of the initial scene: cells, degrees
    jitter: float = 0.5
    jitter_deg: float = 1.0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 < self.grasp_shortcut < 1:
            raise ValueError("grasp_shortcut must be in (0, 1)")


@dataclass
class Decision:
    chosen: Union[PushAction, GraspAction]
    q_push_best: Optional[float]
    grasp_mean: float
    grasp_best: float
    candidate_log: dict = field(default_factory=dict)
    n_predictions: int = 0

    @property
    def kind(self) -> str:
        return "push" if isinstance(self.chosen, PushAction) else "grasp"


def _image_obs(color: np.ndarray) -> Observation:
    return Observation(color=color, height=(color > 0).astype(float))


class GraspEvaluator:
    """Scores a fixed candidate grid on an observation and on edited copies.

    Only candidates whose window can see a changed cell are rescored, so an
    unchanged image reproduces the base scores exactly.
    """

    def __init__(self, params: GraspScorerParams, obs: Observation, grid: np.ndarray):
        self.params = params
        self.grid = grid
        self.occ = obs.color > 0
        self.scores = gn.score_grid(params, obs, grid) if len(grid) else np.zeros(0)
        self._cells = (grid[:, 1].astype(int), grid[:, 0].astype(int)) if len(grid) else None
        # predicted images carry no separate height, so windows can be read
        # straight from occupancy through one index table
        self._index = gn.window_index(grid, obs.color.shape) if tuple(params.window) == gn.WINDOW else None
        self.rescored = 0

    def scores_on(self, color: np.ndarray) -> np.ndarray:
        changed = (color > 0) != self.occ
        if not changed.any() or not len(self.grid):
            return self.scores
        dist = ndimage.distance_transform_edt(~changed)
        near = dist[self._cells] <= WINDOW_REACH
        out = self.scores.copy()
        if near.any():
            if self._index is not None:
                occ = np.take(gn.padded_occupancy(color), self._index)[near]
                out[near] = self.params.predict_windows(np.concatenate([occ, occ], axis=1))
            else:
                out[near] = gn.score_grid(self.params, _image_obs(color), self.grid[near])
            self.rescored += int(near.sum())
        return out


def _grasp_action(row) -> GraspAction:
    return GraspAction(Pose2(float(row[0]), float(row[1]), GRASP_ANGLES[int(row[2])]))


def decide(
    obs: Observation,
    predictor,
    gn_params: GraspScorerParams,
    cfg: PlannerConfig = PlannerConfig(),
    grip: GripperModel = DEFAULT_GRIPPER,
    failed: Sequence[tuple] = (),
) -> Decision:
    """Pick the next action for ``obs``.

    ``predictor`` is DIPN parameters, a predictor name or a handle.
    ``failed`` lists grid rows ``(x, y, angle index)`` that already failed
    and whose window has not changed since; their outcome is known, so they
    score 0.
    """
    grid = grasp_grid(obs, cfg.stride)
    pushes = sample_pushes(obs, cfg.push_spacing, cfg.push_distance, grip)
    if not len(grid) and not pushes:
        raise PlannerError("no push or grasp candidates")
    ev = GraspEvaluator(gn_params, obs, grid)
    tried = np.zeros(len(grid), dtype=bool)
    if len(failed) and len(grid):
        known = {tuple(float(v) for v in row) for row in failed}
        tried = np.array([tuple(float(v) for v in row) in known for row in grid])
        ev.scores[tried] = 0.0
    if len(grid):
        best = int(np.argmax(np.where(tried, -1.0, ev.scores)))
        grasp_best, grasp_mean = float(ev.scores[best]), float(ev.scores.mean())
        if grasp_best > cfg.grasp_shortcut:
            log = {"n_grasps": len(grid), "shortcut": True}
            return Decision(_grasp_action(grid[best]), None, grasp_mean, grasp_best, log, 0)
    else:
        best, grasp_best, grasp_mean = -1, 0.0, 0.0
    handle = as_predictor(predictor)
    preds = handle.predict_many(obs, pushes) if pushes else []
    q = np.array([cfg.gamma * float(ev.scores_on(p.image).mean()) if len(grid) else 0.0 for p in preds])
    log = {
        "n_grasps": len(grid),
        "shortcut": False,
        "push_q": [round(float(v), 6) for v in q],
        "rescored": ev.rescored,
    }
    q_best = float(q.max()) if len(q) else None
    if q_best is not None and (q_best > grasp_mean or best < 0):
        return Decision(pushes[int(np.argmax(q))], q_best, grasp_mean, grasp_best, log, len(preds))
    return Decision(_grasp_action(grid[best]), q_best, grasp_mean, grasp_best, log, len(preds))


# --------------------------------------------------------------------------
# episodes


def _action_dict(a) -> dict:
    if isinstance(a, PushAction):
        s = a.start
        return {"type": "push", "x": s.x, "y": s.y, "theta_deg": math.degrees(s.theta), "distance": a.distance}
    c = a.center
    return {"type": "grasp", "x": c.x, "y": c.y, "theta_deg": math.degrees(c.theta)}


@dataclass
class EpisodeLog:
    actions: list[dict] = field(default_factory=list)
    removed: int = 0
    grasp_attempts: int = 0
    grasp_successes: int = 0
    completed: bool = False
    incomplete_reason: str = "none"
    n_objects: int = 0
    seed: Optional[int] = None
    scene: str = ""

    @property
    def n_actions(self) -> int:
        return len(self.actions)

    @property
    def first_action(self) -> Optional[str]:
        return self.actions[0]["action"]["type"] if self.actions else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EpisodeLog":
        return cls(**d)


def write_logs(path, logs: Sequence[EpisodeLog], header: Optional[dict] = None) -> None:
    """JSON lines: an optional header line, then one episode per line."""
    with open(path, "w") as f:
        if header is not None:
            f.write(json.dumps({"header": header}, sort_keys=True) + "\n")
        for log in logs:
            f.write(json.dumps(log.to_dict(), sort_keys=True) + "\n")


def read_logs(path) -> tuple[Optional[dict], list[EpisodeLog]]:
    header, logs = None, []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            d = json.loads(line)
            if "header" in d:
                header = d["header"]
            else:
                logs.append(EpisodeLog.from_dict(d))
    return header, logs


def jitter_scene(scene: Scene, seed: int, cfg: PlannerConfig) -> Scene:
    """Small random pose perturbation, re-separated so nothing overlaps."""
    if cfg.jitter <= 0 and cfg.jitter_deg <= 0:
        return scene
    rng = np.random.default_rng(seed)
    poses = [
        Pose2(
            b.pose.x + rng.normal(0, cfg.jitter),
            b.pose.y + rng.normal(0, cfg.jitter),
            b.pose.theta + math.radians(rng.normal(0, cfg.jitter_deg)),
        )
        for b in scene.bodies
    ]
    specs = [b.spec for b in scene.bodies]
    poses = separate(specs, poses, scene.size)
    return Scene(tuple(Body(s, p) for s, p in zip(specs, poses)), size=scene.size, seed=scene.seed)


def _still_failing(obs: Observation, failed: list, window: tuple[int, int]) -> list:
    """Failures whose candidate window is unchanged in ``obs``."""
    if not failed:
        return failed
    now = gn.extract_windows(obs, np.array([row for row, _ in failed]), window)
    return [f for f, w in zip(failed, now) if np.array_equal(f[1], w)]


def run_episode(
    scene: Scene,
    predictor,
    gn_params: GraspScorerParams,
    cfg: PlannerConfig = PlannerConfig(),
    seed: Optional[int] = None,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> EpisodeLog:
    """Plan and execute until the workspace is empty, the action budget
    (``max_action_factor`` x initial object count) runs out, or an object
    leaves the workspace."""
    handle = as_predictor(predictor)
    if seed is not None:
        scene = jitter_scene(scene, seed, cfg)
    log = EpisodeLog(n_objects=len(scene), seed=seed)
    budget = cfg.max_action_factor * len(scene)
    # a failed grasp fails again while its window looks the same
    failed: list[tuple[tuple, np.ndarray]] = []
    while len(scene):
        if log.n_actions >= budget:
            log.incomplete_reason = "budget"
            return log
        obs = render(scene)
        failed = _still_failing(obs, failed, gn_params.window)
        d = decide(obs, handle, gn_params, cfg, grip, [row for row, _ in failed])
        step = {
            "action": _action_dict(d.chosen),
            "q_push_best": d.q_push_best,
            "grasp_mean": round(d.grasp_mean, 6),
            "grasp_best": round(d.grasp_best, 6),
            "n_predictions": d.n_predictions,
        }
        if isinstance(d.chosen, PushAction):
            out = simulate_push(scene, d.chosen, grip)
            scene = out.final_scene
            step["outcome"] = {"moved": sorted(out.contacted), "exited": sorted(out.exited)}
            log.actions.append(step)
            if out.exited:
                log.incomplete_reason = "object_exited"
                return log
        else:
            res = adjudicate_grasp(scene, d.chosen, grip)
            log.grasp_attempts += 1
            step["outcome"] = {"result": res.kind, "n_removed": len(res.ids)}
            log.actions.append(step)
            if res.success:
                log.grasp_successes += 1
                log.removed += len(res.ids)
                scene = remove_objects(scene, res.ids)
            else:
                g = d.chosen.center
                row = (g.x, g.y, gn._angle_index(g.theta))
                failed.append((row, gn.extract_windows(obs, np.array([row]), gn_params.window)[0]))
    log.completed = True
    return log


# --------------------------------------------------------------------------
# data collection


def collection_spread(n_objects: int) -> float:
    """Tighter than the default spread so random pushes often cause contact."""
    return 60.0 + 14.0 * n_objects


def random_scene(
    rng: np.random.Generator, max_objects: int, packed_fraction: float = 0.0, tight: bool = False
) -> Scene:
    """A random scene with at most ``max_objects`` objects; with probability
    ``packed_fraction`` it is a packed-block scene."""
    while True:
        seed = int(rng.integers(2**31))
        try:
            if rng.random() < packed_fraction:
                scene = generate_packed_scene(seed)
                if len(scene) <= max_objects:
                    return scene
                continue
            k = int(rng.integers(1, max_objects + 1))
            return generate_scene(k, seed, spread=collection_spread(k) if tight else None)
        except SceneGenerationError:
            continue


def collect_push_dataset(
    n_pushes: int,
    seed: int,
    max_objects: int = 7,
    distance: float = PUSH_DISTANCE,
    packed_fraction: float = 0.25,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> list[PushRecord]:
    """Random feasible pushes on random scenes, labeled by the physics oracle."""
    rng = np.random.default_rng(seed)
    records: list[PushRecord] = []
    while len(records) < n_pushes:
        scene = random_scene(rng, max_objects, packed_fraction, tight=True)
        pushes = sample_pushes(render(scene), distance=distance, grip=grip)
        if not pushes:
            continue
        push = pushes[int(rng.integers(len(pushes)))]
        records.append(record_from_outcome(scene, push, simulate_push(scene, push, grip)))
    return records


def collect_grasp_dataset(
    n_grasps: int,
    seed: int,
    n_objects: int = 10,
    stride: int = 4,
    max_attempts_per_scene: int = 30,
    packed_fraction: float = 0.3,
    gn_params: Optional[GraspScorerParams] = None,
    epsilon: float = 0.2,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> GraspSamples:
    """Grasps executed in sequence on random scenes; labels are the
    adjudicated outcomes and successful grasps remove what they hold.

    Without ``gn_params`` grasps are uniform over the candidate grid. With
    them the best-scoring candidate is executed (a uniform one with
    probability ``epsilon``), skipping candidates that already failed on the
    same state, so confident mistakes become labeled examples.
    """
    rng = np.random.default_rng(seed)
    windows, labels = [], []
    while len(labels) < n_grasps:
        if rng.random() < packed_fraction:
            scene = random_scene(rng, MAX_OBJECTS, 1.0)
        else:
            try:
                scene = generate_scene(min(n_objects, MAX_OBJECTS), int(rng.integers(2**31)))
            except SceneGenerationError:
                continue
        failed: list[int] = []
        obs = grid = scores = None
        for _ in range(max_attempts_per_scene):
            if not len(scene) or len(labels) >= n_grasps:
                break
            if obs is None:
                obs = render(scene)
                grid = grasp_grid(obs, stride)
                scores = gn.score_grid(gn_params, obs, grid) if gn_params is not None else None
                failed = []
            if scores is None or rng.random() < epsilon:
                k = int(rng.integers(len(grid)))
            else:
                masked = scores.copy()
                masked[failed] = -1.0
                k = int(np.argmax(masked))
            res = adjudicate_grasp(scene, _grasp_action(grid[k]), grip)
            windows.append(gn.extract_windows(obs, grid[k][None])[0])
            labels.append(float(res.success))
            if res.success:
                scene = remove_objects(scene, res.ids)
                obs = None
            else:
                failed.append(k)
    if not labels:
        return GraspSamples.empty()
    return GraspSamples(np.stack(windows), np.array(labels), np.full(len(labels), "online"))


def collect_pretrain_dataset(
    n_scenes: int,
    seed: int,
    per_scene: int = 600,
    max_objects: int = 10,
    stride: int = 4,
    packed_fraction: float = 0.3,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> GraspSamples:
    """Geometrically self-labeled candidates from rendered random scenes."""
    rng = np.random.default_rng(seed)
    parts = []
    for _ in range(n_scenes):
        if rng.random() < packed_fraction:
            scene = random_scene(rng, MAX_OBJECTS, 1.0)
        else:
            scene = random_scene(rng, max_objects)
        obs = render(scene)
        grid = grasp_grid(obs, stride)
        pick = np.sort(rng.choice(len(grid), min(per_scene, len(grid)), replace=False))
        parts.append(gn.pretrain_labels(scene, obs, grid[pick], grip))
    return GraspSamples.concat(parts)


def collect_hard_negatives(
    params: GraspScorerParams,
    n_scenes: int,
    seed,
    top_k: int = 100,
    stride: int = 4,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> GraspSamples:
    """Geometric labels for the ``top_k`` best-scoring candidates on packed
    scenes, some broken up by zero to two random pushes first. There a
    confident false positive fires the grasp shortcut instead of a push, or
    wastes attempts on a nearly fitting block member; uniform pretraining
    samples almost never land on these cases."""
    rng = np.random.default_rng(seed)
    parts = []
    for _ in range(n_scenes):
        scene = random_scene(rng, MAX_OBJECTS, 1.0)
        for _ in range(int(rng.integers(3))):
            pushes = sample_pushes(render(scene), grip=grip)
            if pushes:
                out = simulate_push(scene, pushes[int(rng.integers(len(pushes)))], grip)
                if not out.exited:
                    scene = out.final_scene
        obs = render(scene)
        grid = grasp_grid(obs, stride)
        scores = gn.score_grid(params, obs, grid)
        top = np.sort(np.argsort(-scores, kind="stable")[:top_k])
        parts.append(gn.pretrain_labels(scene, obs, grid[top], grip))
    return GraspSamples.concat(parts)


def train_grasp_scorer(
    samples: GraspSamples,
    config: gn.GraspTrainConfig = gn.GraspTrainConfig(),
    stride: int = 4,
    grip: GripperModel = DEFAULT_GRIPPER,
) -> tuple[GraspScorerParams, list[float]]:
    """Fit GN-lite, then run ``config.mine_rounds`` rounds of mining the
    current model's top candidates and refitting from scratch on everything.
    Returns the final model and its loss curve."""
    params = GraspScorerParams(seed=config.seed)
    curve = gn.train(params, samples, config)
    mined: list[GraspSamples] = []
    for r in range(config.mine_rounds):
        mined.append(collect_hard_negatives(params, config.mine_scenes, [config.seed, r], config.mine_top, stride, grip))
        params = GraspScorerParams(seed=config.seed)
        curve = gn.train(params, GraspSamples.concat([samples, *mined]), config)
    return params, curve
