import math

import numpy as np

from pushlab.geometry import Pose2, rectangle
from pushlab.physics import GRASP_ANGLES, PushAction, simulate_push
from pushlab.sampling import enumerate_grasps, grasp_grid, push_is_feasible, sample_pushes
from pushlab.scene import Body, Scene, generate_scene, make_object, render


def test_sampled_pushes_are_feasible_and_make_contact():
    s = generate_scene(6, seed=4)
    obs = render(s)
    pushes = sample_pushes(obs)
    assert len(pushes) > 10
    moved = 0
    for p in pushes:
        assert push_is_feasible(obs.foreground, p)
        out = simulate_push(s, p)
        moved += any(math.hypot(t.x, t.y) > 1 for t in out.transforms)
    assert moved / len(pushes) > 0.8


def test_sampling_deterministic():
    obs = render(generate_scene(5, seed=1))
    a = [p.start.as_tuple() for p in sample_pushes(obs)]
    b = [p.start.as_tuple() for p in sample_pushes(obs)]
    assert a == b


def test_empty_scene_has_no_candidates():
    obs = render(Scene(()))
    assert sample_pushes(obs) == []
    assert grasp_grid(obs).shape == (0, 3)


def test_pushes_aim_at_bundle():
    body = Body(make_object(rectangle(-10, -10, 10, 10), 1), Pose2(112, 112, 0))
    obs = render(Scene((body,)))
    for p in sample_pushes(obs):
        d = np.array([112 - p.start.x, 112 - p.start.y])
        heading = np.array([math.cos(p.start.theta), math.sin(p.start.theta)])
        assert d @ heading / np.linalg.norm(d) > 0.99


def test_infeasible_push_inside_object():
    body = Body(make_object(rectangle(-10, -10, 10, 10), 1), Pose2(112, 112, 0))
    obs = render(Scene((body,)))
    assert not push_is_feasible(obs.foreground, PushAction(Pose2(100, 112, 0)))
    assert not push_is_feasible(obs.foreground, PushAction(Pose2(-5, 112, 0)))
    assert push_is_feasible(obs.foreground, PushAction(Pose2(40, 112, 0)))


def test_grasp_grid_layout():
    obs = render(generate_scene(3, seed=0))
    g = grasp_grid(obs, stride=4)
    assert g.shape[1] == 3 and len(g) % 16 == 0
    assert set(np.unique(g[:, 2]).astype(int)) == set(range(16))
    assert np.all((g[:, :2] - 0.5) % 4 == 0)
    acts = enumerate_grasps(obs, stride=4)
    assert len(acts) == len(g)
    assert acts[3].center.theta == GRASP_ANGLES[3]
