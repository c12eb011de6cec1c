import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from moeplan.errors import InvalidScene, ParseError
from moeplan.scene import (F_ELEMENT_TYPE, F_X, F_Y, N_FEATURES, ElementType, NetworkLimits, Pose2D,
                           flatten_for_network, load_scenes, scene_from_dict, scene_to_dict, stack_flat,
                           to_local, to_parent, transform_to_sdv_frame, transform_to_world, wrap_angle,
                           write_scenes)

from conftest import make_scene

finite = st.floats(-1e3, 1e3, allow_nan=False)
angles = st.floats(-20, 20, allow_nan=False)


@pytest.mark.parametrize("theta, expected", [(0.0, 0.0), (math.pi, math.pi), (-math.pi, math.pi),
                                             (3 * math.pi, math.pi), (2 * math.pi + 0.1, 0.1)])
def test_wrap_angle_examples(theta, expected):
    assert wrap_angle(theta) == pytest.approx(expected, abs=1e-12)


@given(angles)
def test_wrap_angle_range_and_equivalence(theta):
    w = wrap_angle(theta)
    assert -math.pi < w <= math.pi
    assert math.cos(w) == pytest.approx(math.cos(theta), abs=1e-9)
    assert math.sin(w) == pytest.approx(math.sin(theta), abs=1e-9)


@given(finite, finite, angles, finite, finite, angles)
def test_pose_relative_inverts_compose(x, y, t, ox, oy, ot):
    a, b = Pose2D(x, y, t), Pose2D(ox, oy, ot)
    back = a.relative(a.compose(b))
    assert back.x == pytest.approx(b.x, abs=1e-8)
    assert back.y == pytest.approx(b.y, abs=1e-8)
    assert math.cos(back.theta - b.theta) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.tuples(finite, finite, angles), min_size=1, max_size=8), finite, finite, angles)
def test_local_parent_roundtrip(points, ox, oy, ot):
    pts = np.array(points, float)
    origin = Pose2D(ox, oy, ot)
    back = to_parent(to_local(pts, origin), origin)
    np.testing.assert_allclose(back[:, :2], pts[:, :2], atol=1e-8)
    np.testing.assert_allclose(np.cos(back[:, 2] - pts[:, 2]), 1.0, atol=1e-12)


def test_sdv_frame_puts_sdv_at_origin_and_roundtrips():
    scene = make_scene(np.random.default_rng(3))
    local = transform_to_sdv_frame(scene)
    assert (local.sdv.pose.x, local.sdv.pose.y, local.sdv.pose.theta) == (0.0, 0.0, 0.0)
    assert local.frame_origin == scene.sdv.pose
    world = transform_to_world(local)
    for a, b in zip(world.agents, scene.agents):
        np.testing.assert_allclose(a.pose_history[:, :2], b.pose_history[:, :2], atol=1e-9)
    np.testing.assert_allclose(world.ground_truth.sdv_future[:, :2], scene.ground_truth.sdv_future[:, :2], atol=1e-9)
    assert world.sdv.pose.x == pytest.approx(scene.sdv.pose.x, abs=1e-9)


def test_sdv_frame_is_idempotent_on_world_pose():
    scene = make_scene(np.random.default_rng(4))
    twice = transform_to_sdv_frame(transform_to_sdv_frame(scene))
    assert twice.frame_origin.x == pytest.approx(scene.sdv.pose.x)
    assert twice.frame_origin.theta == pytest.approx(scene.sdv.pose.theta)


def test_transform_rejects_non_finite_pose():
    scene = make_scene()
    from dataclasses import replace
    bad = replace(scene, sdv=replace(scene.sdv, pose=Pose2D(float("nan"), 0.0, 0.0)))
    with pytest.raises(InvalidScene):
        transform_to_sdv_frame(bad)


def test_scene_json_roundtrip(tmp_path):
    scenes = [make_scene(np.random.default_rng(i), n_agents=i) for i in range(3)]
    path = tmp_path / "scenes.jsonl"
    write_scenes(path, scenes)
    loaded = load_scenes(path)
    assert len(loaded) == 3
    for a, b in zip(scenes, loaded):
        assert scene_to_dict(a) == scene_to_dict(b)


def test_load_scenes_reports_line_numbers(tmp_path):
    good = json.dumps(scene_to_dict(make_scene()))
    path = tmp_path / "bad.jsonl"
    path.write_text(good + "\n" + "{not json\n")
    with pytest.raises(ParseError) as err:
        load_scenes(path)
    assert err.value.line == 2

    d = scene_to_dict(make_scene())
    d["sdv"]["speed"] = -1.0
    path.write_text(good + "\n" + good + "\n" + json.dumps(d) + "\n")
    with pytest.raises(InvalidScene) as err:
        load_scenes(path)
    assert err.value.line == 3


def test_flatten_layout_and_ordering():
    scene = transform_to_sdv_frame(make_scene(np.random.default_rng(7), n_agents=5, n_map=6))
    limits = NetworkLimits(a_max=3, e_max=8, p_max=5)
    flat = flatten_for_network(scene, limits)
    assert flat.elements.shape == (8, 5, N_FEATURES)
    assert flat.element_mask[0] and flat.point_mask[0, 0] and not flat.point_mask[0, 1:].any()
    assert flat.elements[0, 0, F_ELEMENT_TYPE + ElementType.SDV_HISTORY] == 1
    # agents: nearest three, closest first
    d = [np.hypot(a.pose_history[:, 0], a.pose_history[:, 1]).min() for a in scene.agents]
    assert list(flat.agent_index) == list(np.argsort(d, kind="stable")[:3])
    for slot, idx in enumerate(flat.agent_index):
        np.testing.assert_array_equal(flat.agent_pose[slot], scene.agents[idx].pose_history[-1])
    # route sits in the first map slot
    assert flat.elements[4, 0, F_ELEMENT_TYPE + ElementType.ROUTE_GOAL] == 1
    assert flat.element_mask.sum() == 1 + 3 + 4


def test_flatten_pads_and_masks_empty_slots():
    scene = transform_to_sdv_frame(make_scene(n_agents=1, n_map=1))
    flat = flatten_for_network(scene, NetworkLimits(4, 10, 20))
    assert list(flat.agent_index) == [0, -1, -1, -1]
    assert not flat.element_mask[2:5].any()
    assert np.all(flat.elements[~flat.point_mask] == 0)


def test_flatten_point_truncation_keeps_nearest():
    scene = transform_to_sdv_frame(make_scene(np.random.default_rng(2), n_agents=0, n_map=1))
    flat = flatten_for_network(scene, NetworkLimits(1, 4, 3))
    el = scene.map_elements[0].points
    d = np.hypot(el[:, 0], el[:, 1])
    expect = np.sort(np.argsort(d, kind="stable")[:3])
    np.testing.assert_allclose(flat.elements[3, :len(expect), F_X], el[expect, 0])
    np.testing.assert_allclose(flat.elements[3, :len(expect), F_Y], el[expect, 1])


def test_limits_validation():
    with pytest.raises(ValueError):
        NetworkLimits(a_max=10, e_max=11)


def test_stack_flat_adds_batch_axis():
    flats = [flatten_for_network(transform_to_sdv_frame(make_scene(np.random.default_rng(i))), NetworkLimits(4, 10, 8))
             for i in range(3)]
    batch = stack_flat(flats)
    assert batch["elements"].shape == (3, 10, 8, N_FEATURES)
    assert batch["sdv_state"].shape == (3, 5)


def test_scene_from_dict_without_agents():
    d = scene_to_dict(make_scene(n_agents=0))
    s = scene_from_dict(d)
    assert s.agents == () and s.ground_truth.agent_futures.shape == (0, 30, 3)
