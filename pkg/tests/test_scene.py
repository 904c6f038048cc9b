import math

import numpy as np
import pytest

from pushlab.geometry import Pose2, min_width, polygon_area, sat_mtv
from pushlab.scene import (
    MAX_GRASP_WIDTH,
    Body,
    Scene,
    SceneGenerationError,
    crop_mask,
    generate_packed_scene,
    generate_scene,
    load_scene,
    make_object,
    random_shape,
    render,
    save_scene,
    scene_from_dict,
    scene_to_dict,
    segment,
)


def max_overlap(scene):
    polys = scene.polygons()
    worst = 0.0
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            m = sat_mtv(polys[i], polys[j])
            if m is not None:
                worst = max(worst, m.depth)
    return worst


def test_random_shapes_are_graspable_convex_polygons():
    rng = np.random.default_rng(0)
    for _ in range(200):
        s = random_shape(rng)
        assert polygon_area(s) > 0
        assert min_width(s) <= MAX_GRASP_WIDTH + 1e-9
        assert np.allclose(s.mean(axis=0), 0, atol=10)


@pytest.mark.parametrize("n", [1, 5, 10, 20])
def test_generate_scene_is_valid(n):
    s = generate_scene(n, seed=n)
    assert len(s) == n
    assert s.color_ids() == list(range(1, n + 1))
    assert max_overlap(s) < 1e-6
    for p in s.polygons():
        assert p.min() >= 0 and p.max() <= s.size


def test_generate_scene_deterministic():
    a, b = generate_scene(8, seed=3), generate_scene(8, seed=3)
    assert scene_to_dict(a) == scene_to_dict(b)
    assert scene_to_dict(a) != scene_to_dict(generate_scene(8, seed=4))


def test_generate_scene_rejects_bad_counts():
    with pytest.raises(ValueError):
        generate_scene(0, seed=0)
    with pytest.raises(ValueError):
        generate_scene(31, seed=0)


def test_generation_error_when_crowded():
    with pytest.raises(SceneGenerationError):
        generate_scene(30, seed=0, spread=20, size=40)


def test_packed_scene_valid():
    for seed in range(10):
        s = generate_packed_scene(seed)
        assert 2 <= len(s) <= 21
        assert max_overlap(s) < 1e-6
        assert len(render(s).instances) == len(s)


def test_render_and_segment():
    s = generate_scene(6, seed=1)
    obs = render(s)
    assert obs.color.shape == (224, 224)
    assert obs.color.dtype == np.int16
    assert [i.color_id for i in obs.instances] == list(range(1, 7))
    assert np.array_equal(obs.height > 0, obs.foreground)
    for inst in obs.instances:
        assert inst.mask.sum() >= 8
        assert np.array_equal(inst.mask, obs.color == inst.color_id)


def test_segment_drops_noise_and_splits_components():
    color = np.zeros((30, 30), np.int16)
    color[2:6, 2:6] = 1
    color[20:24, 20:24] = 1
    color[10, 10] = 2
    inst = segment(color)
    assert [i.color_id for i in inst] == [1, 1]
    assert inst[0].center.tolist() in ([3.5, 3.5], [4.5, 4.5])


def test_crop_mask_pads_and_warns():
    m = np.zeros((224, 224), bool)
    m[0:10, 0:10] = True
    c = crop_mask(m, (5.5, 5.5))
    assert c.shape == (60, 60)
    assert c.sum() == 100
    big = np.zeros((224, 224), bool)
    big[50:150, 100:110] = True
    with pytest.warns(UserWarning):
        crop_mask(big, (105.5, 100.5))


def test_scene_json_roundtrip(tmp_path):
    s = generate_scene(5, seed=9)
    path = tmp_path / "s.json"
    save_scene(s, path)
    t = load_scene(path)
    assert np.array_equal(render(s).color, render(t).color)
    for a, b in zip(s.bodies, t.bodies):
        assert a.pose.x == pytest.approx(b.pose.x)
        assert a.pose.theta == pytest.approx(b.pose.theta)
        assert a.spec.mass == b.spec.mass


def test_scene_from_dict_rejects_concave():
    d = {"objects": [{"shape": [[0, 0], [4, 0], [1, 1], [0, 4]], "color_id": 1, "mass": 1, "friction": 0.5, "pose": [50, 50, 0]}]}
    with pytest.raises(ValueError):
        scene_from_dict(d)


def test_shipped_hard_scenes():
    from importlib import resources

    files = sorted(p for p in resources.files("pushlab").joinpath("data/hard").iterdir() if p.name.endswith(".json"))
    assert len(files) == 10
    for f in files:
        s = load_scene(f)
        assert len(s) >= 4
        assert max_overlap(s) < 1e-6


def test_make_object_centers_shape():
    o = make_object([[10, 10], [20, 10], [20, 30], [10, 30]], 3)
    s = Scene((Body(o, Pose2(50, 50, 0)),))
    assert np.allclose(s.polygons()[0].mean(axis=0), [50, 50])
    assert render(s).color[50, 50] == 3
