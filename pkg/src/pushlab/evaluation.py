"""Prediction error, the static and trans baselines, learning curves and
episode metrics."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from . import dipn
from .dipn import DipnParams, PushPrediction, TrainConfig
from .geometry import IDENTITY, Pose2, mask_iou, sample_nearest
from .physics import PushAction, PushOutcome, PushRecord, final_masks
from .scene import Observation, render

PREDICTORS = ("dipn", "static", "trans")


def predict_static(obs: Observation, push: PushAction) -> PushPrediction:
    """Nothing moves: the prediction is the input image itself."""
    centers = np.array([i.center for i in obs.instances]).reshape(-1, 2)
    return PushPrediction(
        [IDENTITY] * len(obs.instances),
        obs.color.copy(),
        [i.mask.copy() for i in obs.instances],
        [i.color_id for i in obs.instances],
        centers,
    )


def pushed_instance(obs: Observation, push: PushAction, step: float = 0.25) -> Optional[int]:
    """Index of the first instance mask hit by the ray from the push start."""
    d = np.array([math.cos(push.start.theta), math.sin(push.start.theta)])
    h, w = obs.color.shape
    s = np.arange(0.0, math.hypot(h, w) * 2, step)
    pts = np.array([push.start.x, push.start.y]) + s[:, None] * d
    best, best_s = None, math.inf
    for k, inst in enumerate(obs.instances):
        hit = sample_nearest(inst.mask, pts)
        if hit.any():
            t = s[int(np.argmax(hit))]
            if t < best_s:
                best, best_s = k, t
    return best


def predict_trans(obs: Observation, push: PushAction) -> PushPrediction:
    """Only the pushed object moves, by exactly the push vector."""
    tf = [IDENTITY] * len(obs.instances)
    k = pushed_instance(obs, push)
    if k is None:
        return predict_static(obs, push)
    c, s = math.cos(push.start.theta), math.sin(push.start.theta)
    tf[k] = Pose2(push.distance * c, push.distance * s, 0.0)
    return dipn.synthesize(obs, tf)


@dataclass
class PredictorHandle:
    """Uniform ``predict(obs, push)`` over DIPN and the two baselines."""

    kind: str
    params: Optional[DipnParams] = None

    def __post_init__(self):
        if self.kind not in PREDICTORS:
            raise ValueError(f"unknown predictor {self.kind!r}")
        if self.kind == "dipn" and self.params is None:
            raise ValueError("dipn predictor needs parameters")

    def predict(self, obs: Observation, push: PushAction) -> PushPrediction:
        return self.predict_many(obs, [push])[0]

    def predict_many(self, obs: Observation, pushes: Sequence[PushAction]) -> list[PushPrediction]:
        if self.kind == "dipn":
            return dipn.predict_many(self.params, obs, pushes)
        fn = predict_static if self.kind == "static" else predict_trans
        return [fn(obs, p) for p in pushes]


def as_predictor(x) -> PredictorHandle:
    if isinstance(x, PredictorHandle):
        return x
    if isinstance(x, DipnParams):
        return PredictorHandle("dipn", x)
    if isinstance(x, str):
        return PredictorHandle(x)
    raise TypeError(f"cannot make a predictor from {type(x).__name__}")


# --------------------------------------------------------------------------
# prediction error


def object_ious(pred: PushPrediction, truth: dict[int, np.ndarray]) -> list[float]:
    if len(pred.ids) != len(truth) or set(pred.ids) != set(truth):
        raise ValueError(f"object mismatch: predicted {len(pred.ids)}, truth {len(truth)}")
    return [mask_iou(m, truth[c]) for m, c in zip(pred.masks, pred.ids)]


def prediction_error(pred: PushPrediction, truth: PushOutcome, obs: Optional[Observation] = None) -> float:
    """``1 - mean IoU`` of predicted vs final object masks; exited objects
    are compared against an empty mask."""
    masks = final_masks(truth.final_scene, truth.exited)
    if obs is not None:
        masks = {i.color_id: masks[i.color_id] for i in obs.instances if i.color_id in masks}
    return 1.0 - float(np.mean(object_ious(pred, masks)))


def record_error(pred: PushPrediction, record: PushRecord) -> float:
    masks = final_masks(record.final_scene(), record.exited)
    masks = {c: masks[c] for c in pred.ids if c in masks}
    return 1.0 - float(np.mean(object_ious(pred, masks)))


def evaluate_predictor(predictor, records: Sequence[PushRecord]) -> np.ndarray:
    """Per-record prediction errors, in record order."""
    handle = as_predictor(predictor)
    errs = []
    for rec in records:
        obs = render(rec.scene_before)
        errs.append(record_error(handle.predict(obs, rec.push), rec))
    return np.array(errs)


def learning_curve(
    train_sizes: Sequence[int],
    train_records: Sequence[PushRecord],
    eval_records: Sequence[PushRecord],
    seeds: Sequence[int] = (0, 1, 2),
    config: TrainConfig = TrainConfig(),
) -> list[dict]:
    """DIPN error vs training-set size, plus constant baseline rows.

    For every size the network is trained from scratch once per seed on the
    first ``size`` records; std is over seeds.
    """
    sizes = list(train_sizes)
    if sizes != sorted(sizes):
        raise ValueError("train sizes must be ascending")
    if sizes and sizes[-1] > len(train_records):
        raise ValueError("not enough training records")
    examples = [dipn.make_example(r) for r in train_records[: sizes[-1] if sizes else 0]]
    baselines = {k: float(evaluate_predictor(k, eval_records).mean()) for k in ("static", "trans")}
    rows = []
    for n in sizes:
        means = []
        for seed in seeds:
            params = DipnParams(seed=seed)
            cfg = TrainConfig(**{**asdict(config), "seed": seed})
            dipn.train(params, examples[:n], cfg)
            means.append(float(evaluate_predictor(params, eval_records).mean()))
        rows.append({"n_pushes": n, "predictor": "dipn", "mean": float(np.mean(means)), "std": float(np.std(means))})
        for k, v in baselines.items():
            rows.append({"n_pushes": n, "predictor": k, "mean": v, "std": 0.0})
    return rows


# --------------------------------------------------------------------------
# episode metrics


@dataclass
class PagMetrics:
    """Episode metrics; ``None`` marks an undefined ratio (no grasps, no actions).

    ``*_completed`` ignores incomplete episodes, ``*_all`` counts them.
    """

    episodes: int
    completion: float
    grasp_success_completed: Optional[float]
    grasp_success_all: Optional[float]
    efficiency_completed: Optional[float]
    efficiency_all: Optional[float]


def _ratio(num: float, den: float) -> Optional[float]:
    return None if den == 0 else num / den


def pag_metrics(logs: Sequence) -> PagMetrics:
    if not logs:
        raise ValueError("no episode logs")
    done = [l for l in logs if l.completed]

    def sums(group):
        return (
            sum(l.grasp_successes for l in group),
            sum(l.grasp_attempts for l in group),
            sum(l.removed for l in group),
            sum(l.n_actions for l in group),
        )

    sc, ac, rc, nc = sums(done)
    sa, aa, ra, na = sums(logs)
    return PagMetrics(
        episodes=len(logs),
        completion=len(done) / len(logs),
        grasp_success_completed=_ratio(sc, ac),
        grasp_success_all=_ratio(sa, aa),
        efficiency_completed=_ratio(rc, nc),
        efficiency_all=_ratio(ra, na),
    )


# --------------------------------------------------------------------------
# tables


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def rows_to_csv(rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> str:
    """Deterministic CSV text: fixed column order, fixed float format, ``\\n`` lines."""
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def write_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    with open(path, "w", newline="") as f:
        f.write(rows_to_csv(rows, columns))


def read_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        for r in csv.DictReader(f):
            out.append({k: _parse(v) for k, v in r.items()})
    return out


def _parse(v: str):
    if v == "":
        return None
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")
