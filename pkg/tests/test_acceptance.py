"""Acceptance suite: each test checks one criterion at its stated tolerance
and records a PASS/FAIL line (see conftest.py). Trained models are built
once per session by the fixtures below with the library's default recipes.
"""

import copy
import json
import math
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from pushlab import autodiff as ad
from pushlab import dipn
from pushlab import evaluation as ev
from pushlab import graspnet as gn
from pushlab import planner as pl
from pushlab.cli import main
from pushlab.dipn import DipnArch, DipnParams, TrainConfig
from pushlab.geometry import Pose2, convex_hull, make_polygon, mask_iou, polygon_iou, rasterize, rectangle, regular_polygon
from pushlab.physics import PushAction, record_from_outcome, simulate_push
from pushlab.scene import Body, Scene, generate_scene, load_scene, make_object, render

pytestmark = pytest.mark.acceptance

HARD = sorted(Path(str(resources.files("pushlab") / "data" / "hard")).glob("*.json"))
REPEATS = 30


# --------------------------------------------------------------------------
# session models


@pytest.fixture(scope="session")
def push_data():
    return pl.collect_push_dataset(2000, seed=0), pl.collect_push_dataset(300, seed=1)


@pytest.fixture(scope="session")
def dipn_model(push_data):
    train, _ = push_data
    params = DipnParams(seed=0)
    t = time.perf_counter()
    dipn.train(params, [dipn.make_example(r) for r in train], TrainConfig())
    return params, time.perf_counter() - t


@pytest.fixture(scope="session")
def pretrain_samples():
    return pl.collect_pretrain_dataset(100, seed=0)


@pytest.fixture(scope="session")
def gn_model(pretrain_samples):
    online = pl.collect_grasp_dataset(1500, seed=1)
    params, _ = pl.train_grasp_scorer(gn.GraspSamples.concat([pretrain_samples, online]), gn.GraspTrainConfig())
    return params


@pytest.fixture(scope="session")
def hard_runs(dipn_model, gn_model):
    """30 jittered repeats of every hard scene, with DIPN and with the static predictor."""
    cfg = pl.PlannerConfig()
    runs = {}
    for kind in ("dipn", "static"):
        handle = ev.PredictorHandle(kind, dipn_model[0] if kind == "dipn" else None)
        runs[kind] = {f.stem: [pl.run_episode(load_scene(f), handle, gn_model, cfg, seed=r) for r in range(REPEATS)] for f in HARD}
    return runs


# --------------------------------------------------------------------------
# 1. baseline ordering


def test_c1_dipn_beats_baselines(push_data, dipn_model, criterion):
    _, held = push_data
    params, seconds = dipn_model
    err = {k: ev.evaluate_predictor(k, held).mean() for k in ("static", "trans")}
    err["dipn"] = ev.evaluate_predictor(ev.PredictorHandle("dipn", params), held).mean()
    ok = err["dipn"] < err["static"] - 0.05 and err["dipn"] < err["trans"] - 0.05 and err["dipn"] < 0.15
    detail = ", ".join(f"{k}={v:.4f}" for k, v in err.items()) + f" (train {seconds / 60:.1f} min)"
    assert criterion(1, ok, detail)


# --------------------------------------------------------------------------
# 2. gradient correctness


def test_c2_gradient_matches_finite_differences(criterion):
    arch = DipnArch(
        push_layers=(8,), center_layers=(8,), global_layers=(8,), mask_layers=(8,),
        dt_layers=(8,), it_layers=(8,), dec_layers=(8, 3),
    )
    params = DipnParams(seed=3, arch=arch)
    for t in params.parameters():
        t.data = t.data * 0.5
    exs = []
    for seed in range(2):
        s = generate_scene(3, seed=seed, spread=80)
        p = s.bodies[0].pose
        push = PushAction(Pose2(p.x - 40, p.y, 0))
        exs.append(dipn.make_example(record_from_outcome(s, push, simulate_push(s, push))))
    ad.backward(dipn.batch_loss(params, exs))
    rng = np.random.default_rng(0)
    worst = 0.0
    for t in params.parameters():
        flat = t.data.reshape(-1)
        for k in rng.choice(flat.size, size=min(3, flat.size), replace=False):
            old = flat[k]
            flat[k] = old + 1e-6
            hi = float(dipn.batch_loss(params, exs).data)
            flat[k] = old - 1e-6
            lo = float(dipn.batch_loss(params, exs).data)
            flat[k] = old
            num = (hi - lo) / 2e-6
            ana = t.grad.reshape(-1)[k]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    assert criterion(2, worst < 1e-4, f"max relative error {worst:.2e}")


# --------------------------------------------------------------------------
# 3. permutation equivariance


def test_c3_permutation_equivariance(criterion):
    params = DipnParams(seed=0)
    rng = np.random.default_rng(0)
    worst = 0.0
    images_equal = True
    for k in range(100):
        s = generate_scene(int(rng.integers(2, 8)), seed=k, spread=90)
        obs = render(s)
        p = s.bodies[int(rng.integers(len(s)))].pose
        th = rng.uniform(-math.pi, math.pi)
        push = PushAction(Pose2(p.x - 35 * math.cos(th), p.y - 35 * math.sin(th), th))
        perm = rng.permutation(len(obs.instances))
        other = copy.copy(obs)
        other.instances = [obs.instances[j] for j in perm]
        a = dipn.predict(params, obs, push)
        b = dipn.predict(params, other, push)
        for j, src in enumerate(perm):
            worst = max(worst, float(np.max(np.abs(np.subtract(a.transforms[src].as_tuple(), b.transforms[j].as_tuple())))))
        images_equal &= bool(np.array_equal(a.image, b.image))
    assert criterion(3, worst <= 1e-9 and images_equal, f"max deviation {worst:.1e}, images equal: {images_equal}")


# --------------------------------------------------------------------------
# 4. oracle-baseline calibration

# push vectors of length 25 with whole-cell components, so the baseline's
# mask shift is exact and any disagreement would come from the motion
LATTICE_PUSHES = [(25, 0), (15, 20), (20, 15), (7, 24), (24, 7), (0, 25), (-15, 20), (-24, -7), (7, -24)]


def test_c4_trans_and_static_calibration(criterion):
    worst = 1.0
    for shape in (rectangle(-10, -10, 10, 10), regular_polygon(6, 11), regular_polygon(8, 10, math.pi / 8)):
        for vx, vy in LATTICE_PUSHES:
            th = math.atan2(vy, vx)
            d = np.array([vx, vy]) / 25.0
            c = np.array([112.0, 112.0])
            s = Scene((Body(make_object(shape, 1), Pose2(c[0], c[1], th)),))
            back = -np.min((s.polygons()[0] - c) @ d)
            start = c - (back + 25) * d
            push = PushAction(Pose2(start[0], start[1], th), 25)
            out = simulate_push(s, push)
            assert out.contacted
            worst = min(worst, 1 - ev.prediction_error(ev.predict_trans(render(s), push), out))
    static_errs = []
    for seed in range(20):
        s = generate_scene(5, seed=seed)
        for corner in ((5, 5, 225), (219, 5, -45), (5, 219, 135), (219, 219, 45)):
            push = PushAction(Pose2(corner[0], corner[1], math.radians(corner[2])))
            out = simulate_push(s, push)
            if not out.contacted:
                static_errs.append(ev.prediction_error(ev.predict_static(render(s), push), out))
    ok = worst >= 0.99 and len(static_errs) > 0 and max(static_errs) == 0.0
    assert criterion(4, ok, f"trans min IoU {worst:.4f}; static error {max(static_errs)} on {len(static_errs)} no-contact pushes")


# --------------------------------------------------------------------------
# 5. rasterized vs analytic IoU


def _convex(rng, center, diameter):
    hull = convex_hull(rng.normal(size=(12, 2)))
    span = max(np.hypot(*(a - b)) for a in hull for b in hull)
    return make_polygon((hull - hull.mean(axis=0)) / span * diameter + center)


def test_c5_raster_iou_matches_analytic(criterion):
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        c = rng.uniform(50, 170, 2)
        a = _convex(rng, c, rng.uniform(12, 50))
        b = _convex(rng, c + rng.normal(0, 8, 2), rng.uniform(12, 50))
        worst = max(worst, abs(mask_iou(rasterize(a), rasterize(b)) - polygon_iou(a, b)))
    assert criterion(5, worst <= 0.02, f"max |raster - analytic| = {worst:.4f}")


# --------------------------------------------------------------------------
# 6. planner arithmetic


class _Scripted:
    window = gn.WINDOW

    def __init__(self, first, later):
        self.values = [first, later]
        self.calls = 0

    def predict_windows(self, windows):
        v = self.values[min(self.calls, 1)]
        self.calls += 1
        return v(len(windows)) if callable(v) else np.full(len(windows), float(v))


class _Fill(ev.PredictorHandle):
    def __init__(self):
        super().__init__("static")

    def predict_many(self, obs, pushes):
        preds = []
        for _ in pushes:
            p = dipn.synthesize(obs, [Pose2(0, 0, 0)] * len(obs.instances))
            p.image = np.ones_like(obs.color)
            preds.append(p)
        return preds


def test_c6_planner_arithmetic(criterion):
    s = Scene(tuple(Body(make_object(rectangle(-10, -10, 10, 10), k + 1), Pose2(90 + 50 * k, 112, 0)) for k in range(2)))
    obs = render(s)

    def spike(n):
        v = np.full(n, 0.1)
        v[3] = 0.71
        return v

    shortcut = pl.decide(obs, "static", _Scripted(spike, 0.0), pl.PlannerConfig())
    lookahead = pl.decide(obs, _Fill(), _Scripted(0.5, 0.6), pl.PlannerConfig(gamma=0.9))
    same = pl.decide(obs, "static", gn.GraspScorerParams(seed=0), pl.PlannerConfig(grasp_shortcut=0.99))
    cases = {
        "shortcut": shortcut.kind == "grasp" and shortcut.candidate_log["shortcut"] and shortcut.n_predictions == 0,
        "push 0.54>0.5": lookahead.kind == "push" and math.isclose(lookahead.q_push_best, 0.54) and lookahead.grasp_mean == 0.5,
        "identical->grasp": same.kind == "grasp",
    }
    assert criterion(6, all(cases.values()), ", ".join(f"{k}: {v}" for k, v in cases.items()))


# --------------------------------------------------------------------------
# 7. episode behavior


def test_c7_episode_behavior(dipn_model, gn_model, hard_runs, criterion):
    t = time.perf_counter()
    handle = ev.PredictorHandle("dipn", dipn_model[0])
    cfg = pl.PlannerConfig()
    rand = [pl.run_episode(generate_scene(10, seed=5000 + k), handle, gn_model, cfg, seed=k) for k in range(30)]
    m_rand = ev.pag_metrics(rand)
    m_dipn = ev.pag_metrics([l for logs in hard_runs["dipn"].values() for l in logs])
    m_static = ev.pag_metrics([l for logs in hard_runs["static"].values() for l in logs])
    # a scene opens with a push when most of its repeats do
    pushes_first = sum(
        sum(l.first_action == "push" for l in logs) * 2 > len(logs) for logs in hard_runs["dipn"].values()
    )
    parts = {
        "a": m_rand.completion >= 0.9 and (m_rand.grasp_success_all or 0) >= 0.8,
        "b": pushes_first >= 8 and m_dipn.completion >= 0.8,
        "c": m_static.completion < m_dipn.completion,
    }
    detail = (
        f"(a) random completion {m_rand.completion:.3f}, grasp success {m_rand.grasp_success_all:.3f}; "
        f"(b) push-first {pushes_first}/10, hard completion {m_dipn.completion:.3f}; "
        f"(c) static completion {m_static.completion:.3f}; "
        f"random-scene time {time.perf_counter() - t:.0f} s"
    )
    assert criterion(7, all(parts.values()), detail)


# --------------------------------------------------------------------------
# 8. GN-lite pretraining


def test_c8_pretraining_accuracy(pretrain_samples, criterion):
    t = time.perf_counter()
    params = gn.GraspScorerParams(seed=0)
    gn.train(params, pretrain_samples, gn.GraspTrainConfig(mine_rounds=0))
    held = pl.collect_pretrain_dataset(20, seed=777)
    acc = gn.accuracy(params, held)
    area = gn.auc(params.predict_windows(held.windows), held.labels)
    detail = f"accuracy {acc:.4f} (positives {held.labels.mean():.3f}, AUC {area:.3f}), {time.perf_counter() - t:.0f} s"
    assert criterion(8, acc >= 0.9, detail)


# --------------------------------------------------------------------------
# 9. determinism


def test_c9_reruns_are_byte_identical(tmp_path, dipn_model, gn_model, criterion):
    dipn_model[0].save(tmp_path / "dipn.ckpt")
    gn_model.save(tmp_path / "gn.ckpt")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"dipn_train": {"epochs": 2}}))
    same = {}
    for k in (1, 2):
        d = tmp_path / f"run{k}"
        c = ["--seed", "4", "--config", str(cfg)]
        assert main(["collect-pushes", *c, "--out", str(d / "push.jsonl"), "--n", "20"]) == 0
        assert main(["train-dipn", *c, "--out", str(d / "small.ckpt"), "--data", str(d / "push.jsonl")]) == 0
        for pred in ("dipn", "static", "trans"):
            assert main(["eval-dipn", *c, "--out", str(d / "ev"), "--data", str(d / "push.jsonl"),
                         "--predictor", pred, "--dipn", str(tmp_path / "dipn.ckpt")]) == 0
        assert main(["run-episodes", *c, "--out", str(d / "ep"), "--scenes", str(HARD[0]), "--repeat", "2",
                     "--dipn", str(tmp_path / "dipn.ckpt"), "--gn", str(tmp_path / "gn.ckpt")]) == 0
        assert main(["report", *c, "--out", str(d / "rep"), "--logs", str(d / "ep" / "episodes.jsonl")]) == 0
        same[k] = {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.suffix in (".csv", ".jsonl")}
    ok = same[1].keys() == same[2].keys() and all(same[1][p] == same[2][p] for p in same[1])
    assert criterion(9, ok, f"{len(same[1])} CSV/JSONL outputs compared")
