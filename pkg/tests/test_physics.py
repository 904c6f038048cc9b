import math

import numpy as np
import pytest

from pushlab.geometry import Pose2, poses_close, rectangle, regular_polygon, sat_mtv
from pushlab.physics import (
    DEFAULT_GRIPPER,
    GraspAction,
    GripperModel,
    PushAction,
    PushRecord,
    adjudicate_grasp,
    final_masks,
    record_from_outcome,
    remove_objects,
    simulate_push,
)
from pushlab.scene import Body, Scene, generate_scene, make_object, render


def square(side, color_id, pose, mass=1.0):
    h = side / 2.0
    return Body(make_object(rectangle(-h, -h, h, h), color_id, mass=mass), pose)


def scene_of(*bodies):
    return Scene(tuple(bodies))


def no_overlap(scene, tol=1e-6):
    polys = scene.polygons()
    for i in range(len(polys)):
        for j in range(i + 1, len(polys)):
            m = sat_mtv(polys[i], polys[j])
            if m is not None and m.depth > tol:
                return False
    return True


# --------------------------------------------------------------------------
# gripper geometry


def test_gripper_dimensions():
    g = DEFAULT_GRIPPER
    right, left = g.fingers_local()
    assert right[:, 0].min() == pytest.approx(14.5)
    assert left[:, 0].max() == pytest.approx(-14.5)
    assert np.ptp(right[:, 1]) == pytest.approx(24)
    c = g.closing_local()
    assert c[:, 0].max() == pytest.approx(14.5)
    p = g.pusher_local()
    assert np.ptp(p[:, 0]) == pytest.approx(25) and np.ptp(p[:, 1]) == pytest.approx(24)
    with pytest.raises(ValueError):
        GripperModel(stroke=4)


def test_negative_push_distance_rejected():
    with pytest.raises(ValueError):
        PushAction(Pose2(0, 0, 0), -1)


# --------------------------------------------------------------------------
# pushing


def test_no_contact_push_is_identity():
    s = scene_of(square(20, 1, Pose2(150, 150, 0.3)))
    out = simulate_push(s, PushAction(Pose2(20, 20, 0)))
    assert poses_close(out.transforms[0], Pose2(0, 0, 0))
    assert out.exited == set() and not out.contacted


def test_centered_push_translates_by_overlap():
    # pusher front face starts at x = 40 + 25 = 65; square face at 70
    s = scene_of(square(20, 1, Pose2(80, 112, 0)))
    out = simulate_push(s, PushAction(Pose2(40, 112, 0), 25))
    t = out.transforms[0]
    assert t.x == pytest.approx(20, abs=1e-6)
    assert t.y == pytest.approx(0, abs=1e-9)
    assert t.theta == pytest.approx(0, abs=1e-9)


def test_push_direction_is_rotation_equivariant():
    base = scene_of(square(20, 1, Pose2(80, 112, 0)))
    a = simulate_push(base, PushAction(Pose2(40, 112, 0))).transforms[0]
    rot = scene_of(square(20, 1, Pose2(112, 80, math.pi / 2)))
    b = simulate_push(rot, PushAction(Pose2(112, 40, math.pi / 2))).transforms[0]
    assert b.y == pytest.approx(a.x, abs=1e-6)
    assert b.x == pytest.approx(-a.y, abs=1e-6)


def test_off_center_push_rotates():
    s = scene_of(square(20, 1, Pose2(80, 100, 0)))
    out = simulate_push(s, PushAction(Pose2(40, 112, 0)))
    t = out.transforms[0]
    assert t.x > 5
    assert abs(t.theta) > 0.01


def test_chain_push_moves_both():
    s = scene_of(square(20, 1, Pose2(80, 112, 0)), square(20, 2, Pose2(101, 112, 0)))
    out = simulate_push(s, PushAction(Pose2(40, 112, 0)))
    assert out.transforms[0].x > 15
    assert out.transforms[1].x > 15
    assert out.contacted == {0, 1}
    assert no_overlap(out.final_scene)


def test_push_off_workspace_exits():
    s = scene_of(square(10, 1, Pose2(218, 112, 0)))
    out = simulate_push(s, PushAction(Pose2(180, 112, 0), 25))
    assert out.exited == {0}
    masks = final_masks(out.final_scene, out.exited)
    assert not masks[1].any()


def test_random_pushes_leave_no_penetration_and_are_deterministic():
    rng = np.random.default_rng(0)
    for k in range(15):
        s = generate_scene(8, seed=k, spread=110)
        target = s.bodies[int(rng.integers(len(s)))].pose
        theta = rng.uniform(-math.pi, math.pi)
        start = Pose2(target.x - 45 * math.cos(theta), target.y - 45 * math.sin(theta), theta)
        a = simulate_push(s, PushAction(start))
        b = simulate_push(s, PushAction(start))
        assert no_overlap(a.final_scene, tol=1e-3)
        assert [t.as_tuple() for t in a.transforms] == [t.as_tuple() for t in b.transforms]


def test_record_roundtrip():
    s = generate_scene(4, seed=2)
    p = s.bodies[0].pose
    push = PushAction(Pose2(p.x - 40, p.y, 0))
    out = simulate_push(s, push)
    rec = record_from_outcome(s, push, out)
    back = PushRecord.from_dict(rec.to_dict())
    assert np.array_equal(render(back.final_scene()).color, render(out.final_scene).color)


# --------------------------------------------------------------------------
# grasping


def grasp(scene, x, y, deg=0.0):
    return adjudicate_grasp(scene, GraspAction(Pose2(x, y, math.radians(deg))))


def test_grasp_isolated_square_succeeds():
    s = scene_of(square(20, 1, Pose2(100, 100, 0)))
    r = grasp(s, 100, 100)
    assert r.success and r.ids == (0,)


def test_grasp_empty_space_misses():
    s = scene_of(square(20, 1, Pose2(100, 100, 0)))
    assert grasp(s, 30, 30).kind == "miss"


def test_grasp_too_wide_collides():
    s = scene_of(square(32, 1, Pose2(100, 100, 0)))
    assert grasp(s, 100, 100).kind == "finger_collision"
    # rotating the gripper does not help a 32-cell square
    assert not grasp(s, 100, 100, 90).success


def test_grasp_finger_on_neighbour_collides():
    s = scene_of(square(20, 1, Pose2(100, 100, 0)), square(20, 2, Pose2(122, 100, 0)))
    assert grasp(s, 100, 100).kind == "finger_collision"
    # across the gap the fingers fit
    assert grasp(s, 100, 100, 90).success


def test_grasp_sliver_misses():
    s = scene_of(square(20, 1, Pose2(100, 100, 0)))
    # the closing region catches only 2 cells of the edge
    assert grasp(s, 100, 100 - 10 - 12 + 2, 0).kind == "miss"


def test_grasp_corner_outside_friction_cone_misses():
    s = scene_of(square(20, 1, Pose2(100, 100, math.pi / 4)))
    assert grasp(s, 100, 100).success
    # fingers meet only the 45-degree faces near the top corner
    assert grasp(s, 100, 100 + 13).kind == "miss"


def test_grasp_two_small_objects():
    s = scene_of(square(8, 1, Pose2(95, 100, 0)), square(8, 2, Pose2(105, 100, 0)))
    r = grasp(s, 100, 100)
    assert r.success and r.ids == (0, 1)


def test_remove_objects():
    s = generate_scene(4, seed=0)
    t = remove_objects(s, [1, 3])
    assert t.color_ids() == [1, 3]


def test_final_masks_follow_the_rendering():
    # touching squares share a boundary column; the later body owns it
    s = scene_of(square(10, 1, Pose2(100.5, 100.5, 0)), square(10, 2, Pose2(110.5, 100.5, 0)))
    masks = final_masks(s)
    color = render(s).color
    assert not (masks[1] & masks[2]).any() and masks[2][100, 105]
    assert np.array_equal(masks[2], color == 2) and np.array_equal(masks[1], color == 1)


def test_finger_may_brush_within_tolerance():
    # inner finger faces sit 14.5 cells out; a 29.8-cell square pokes in by 0.4
    s = scene_of(square(29.8, 1, Pose2(100, 100, 0)))
    assert grasp(s, 100, 100).success
    s = scene_of(square(31.2, 1, Pose2(100, 100, 0)))
    assert grasp(s, 100, 100).kind == "finger_collision"
