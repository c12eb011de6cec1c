from dataclasses import replace

import numpy as np
import pytest

from conftest import make_scene
from moeplan.diff.gradcheck import check_gradients
from moeplan.errors import InvalidScene, MaskError
from moeplan.kinematics import extract_controls, rollout_unicycle
from moeplan.model import MixturePlanner, ModelConfig, card_path, load_model, save_model
from moeplan.scene import stack_flat, transform_to_sdv_frame
from moeplan.training import LossWeights, stack_targets, targets_for, total_loss

SMALL = ModelConfig(d_point=8, d_model=16, d_ffn=16, d_head_hidden=16, n_heads=2, n_enc_layers=2, n_dec_layers=2,
                    a_max=4, e_max=10, p_max=12)


def _perturb_heads(model, seed=0, scale=0.3):
    """Give the zero-ish output heads visible weights so outputs differ between modes."""
    rng = np.random.default_rng(seed)
    for head in (model.sdv_out, model.agent_out):
        head.weight.data = rng.normal(scale=scale, size=head.weight.shape)
    return model


@pytest.fixture(scope="module")
def small_model():
    return _perturb_heads(MixturePlanner(SMALL))


def test_output_shapes_and_simplex():
    model = MixturePlanner(ModelConfig(a_max=6, e_max=16))
    scene = make_scene(np.random.default_rng(1), n_agents=3)
    pred = model.predict(scene)
    assert pred.sdv.trajectories.shape == (10, 45, 7)
    assert pred.agents.trajectories.shape == (3, 5, 30, 3)
    assert abs(pred.sdv.probabilities.sum() - 1) < 1e-9 and np.all(pred.sdv.probabilities >= 0)
    np.testing.assert_allclose(pred.agents.probabilities.sum(-1), 1.0, atol=1e-9)
    assert set(pred.agents.agent_ids) == {"a0", "a1", "a2"}


def test_only_available_agents_get_predictions(small_model):
    scene = make_scene(np.random.default_rng(2), n_agents=2)
    pred = small_model.predict(scene)
    assert len(pred.agents) == 2


def test_agents_beyond_capacity_are_dropped(small_model):
    scene = make_scene(np.random.default_rng(3), n_agents=7)
    pred = small_model.predict(scene)
    assert len(pred.agents) == SMALL.a_max


def test_scene_without_agents(small_model):
    pred = small_model.predict(make_scene(np.random.default_rng(4), n_agents=0))
    assert len(pred.agents) == 0
    assert pred.agents.trajectories.shape[0] == 0


def test_predict_is_deterministic():
    scene = make_scene(np.random.default_rng(5))
    a = MixturePlanner(SMALL).predict(scene)
    b = MixturePlanner(SMALL).predict(scene)
    np.testing.assert_array_equal(a.sdv.trajectories, b.sdv.trajectories)
    np.testing.assert_array_equal(a.agents.trajectories, b.agents.trajectories)


def test_every_plan_is_a_consistent_rollout(small_model):
    scene = transform_to_sdv_frame(make_scene(np.random.default_rng(6)))
    pred = small_model.predict(scene)
    s = scene.sdv
    initial = (0.0, 0.0, 0.0, s.speed, s.acceleration)
    for traj in pred.sdv.trajectories:
        again = rollout_unicycle(initial, extract_controls(traj))
        assert np.max(np.abs(again - traj)) <= 1e-12


def test_controls_respect_limits(small_model):
    pred = small_model.predict(make_scene(np.random.default_rng(7)))
    controls = extract_controls(pred.sdv.trajectories)
    assert np.all(np.abs(controls[..., 0]) <= SMALL.j_max)
    assert np.all(np.abs(controls[..., 1]) <= SMALL.k_max)


def _features(model, scene):
    ready, flats = model.prepare([scene])
    batch = stack_flat(flats)
    return model.encode_points(batch).data[0], batch


def test_point_order_and_duplicates_do_not_change_element_features(small_model):
    scene = transform_to_sdv_frame(make_scene(np.random.default_rng(8), n_map=2))
    base, batch = _features(small_model, scene)
    slot = SMALL.a_max + 1
    n = int(batch["point_mask"][0, slot].sum())
    assert 2 <= n < SMALL.p_max
    shuffled = {k: v.copy() for k, v in batch.items()}
    perm = np.random.default_rng(0).permutation(n)
    shuffled["elements"][0, slot, :n] = batch["elements"][0, slot, perm]
    duplicated = {k: v.copy() for k, v in batch.items()}
    duplicated["elements"][0, slot, n] = batch["elements"][0, slot, 0]
    duplicated["point_mask"][0, slot, n] = True
    for variant in (shuffled, duplicated):
        feats = small_model.encode_points(variant).data[0]
        np.testing.assert_allclose(feats, base, atol=1e-12)


def test_masked_elements_do_not_influence_outputs(small_model):
    scene = transform_to_sdv_frame(make_scene(np.random.default_rng(9), n_agents=2))
    _, flats = small_model.prepare([scene])
    batch = stack_flat(flats)
    out_a = small_model.forward(batch)
    empty = np.flatnonzero(~batch["element_mask"][0])
    assert len(empty)
    batch["elements"][0, empty] = 123.0
    batch["point_mask"][0, empty] = True
    out_b = small_model.forward(batch)
    np.testing.assert_array_equal(out_a.sdv_states.data, out_b.sdv_states.data)
    np.testing.assert_array_equal(out_a.sdv_logits.data, out_b.sdv_logits.data)
    valid = batch["element_mask"][0, 1:1 + SMALL.a_max]
    np.testing.assert_array_equal(out_a.agent_trajs.data[0, valid], out_b.agent_trajs.data[0, valid])


def test_single_element_output_depends_only_on_it():
    model = MixturePlanner(SMALL)
    x = np.random.default_rng(0).normal(size=(1, 3, SMALL.d_model))
    mask = np.array([[True, False, False]])
    from moeplan.diff import Tensor
    a = model.encode_context(Tensor(x), mask).data
    x2 = x.copy()
    x2[0, 1:] = 7.0
    b = model.encode_context(Tensor(x2), mask).data
    np.testing.assert_array_equal(a[0, 0], b[0, 0])


def test_zeroed_sdv_queries_give_identical_plans():
    model = _perturb_heads(MixturePlanner(SMALL))
    model.sdv_queries.data[:] = 0.0
    pred = model.predict(make_scene(np.random.default_rng(10)))
    np.testing.assert_allclose(pred.sdv.trajectories, pred.sdv.trajectories[:1].repeat(10, 0), atol=1e-12)
    np.testing.assert_allclose(pred.sdv.probabilities, 0.1, atol=1e-12)


def test_changing_a_context_element_changes_the_queries(small_model):
    scene = transform_to_sdv_frame(make_scene(np.random.default_rng(11)))
    _, flats = small_model.prepare([scene])
    batch = stack_flat(flats)
    ctx = small_model.encode_context(small_model.encode_points(batch), batch["element_mask"])
    sdv_q, _, _ = small_model.decode(ctx, small_model.encode_points(batch), batch["element_mask"])
    slot = SMALL.a_max + 1
    batch["elements"][0, slot, :, 0] += 1.0
    ctx2 = small_model.encode_context(small_model.encode_points(batch), batch["element_mask"])
    sdv_q2, _, _ = small_model.decode(ctx2, small_model.encode_points(batch), batch["element_mask"])
    assert np.max(np.abs(sdv_q.data - sdv_q2.data)) > 0


def test_agent_order_equivariance(small_model):
    scene = make_scene(np.random.default_rng(12), n_agents=3)
    flipped = replace(scene, agents=scene.agents[::-1],
                      ground_truth=None)
    a = small_model.predict(replace(scene, ground_truth=None))
    b = small_model.predict(flipped)
    np.testing.assert_allclose(a.sdv.trajectories, b.sdv.trajectories, atol=1e-12)
    for i, agent_id in enumerate(a.agents.agent_ids):
        j = b.agents.agent_ids.index(agent_id)
        np.testing.assert_allclose(a.agents.trajectories[i], b.agents.trajectories[j], atol=1e-12)
        np.testing.assert_allclose(a.agents.probabilities[i], b.agents.probabilities[j], atol=1e-12)


def test_identical_agents_get_identical_predictions(small_model):
    scene = make_scene(np.random.default_rng(13), n_agents=1)
    twin = replace(scene.agents[0], agent_id="twin")
    pred = small_model.predict(replace(scene, agents=(scene.agents[0], twin), ground_truth=None))
    np.testing.assert_allclose(pred.agents.trajectories[0], pred.agents.trajectories[1], atol=1e-12)


def test_element_without_points_raises():
    model = MixturePlanner(SMALL)
    _, flats = model.prepare([make_scene(np.random.default_rng(14))])
    batch = stack_flat(flats)
    batch["point_mask"][0, 1] = False
    with pytest.raises(MaskError):
        model.forward(batch)


def test_all_masked_context_raises():
    model = MixturePlanner(SMALL)
    from moeplan.diff import Tensor
    with pytest.raises(InvalidScene):
        model.encode_context(Tensor(np.zeros((1, 3, SMALL.d_model))), np.zeros((1, 3), bool))


def test_save_and_load_round_trip(tmp_path, small_model):
    path = tmp_path / "model.npz"
    save_model(small_model, path, {"note": "test"})
    assert card_path(path).exists()
    back = load_model(path)
    assert back.config == small_model.config
    scene = make_scene(np.random.default_rng(15))
    np.testing.assert_array_equal(back.predict(scene).sdv.trajectories, small_model.predict(scene).sdv.trajectories)


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=30, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(num_sdv_modes=0)


def test_full_model_gradient_check():
    cfg = ModelConfig(a_max=4, e_max=12, p_max=12)
    model = _perturb_heads(MixturePlanner(cfg), scale=0.05)
    rng = np.random.default_rng(16)
    scenes = [make_scene(rng, n_agents=2), make_scene(rng, n_agents=3)]
    ready, flats = model.prepare(scenes)
    batch = stack_flat(flats)
    targets = stack_targets([targets_for(s, f, cfg) for s, f in zip(ready, flats)])

    def loss():
        return total_loss(model.forward(batch), targets, LossWeights()).total

    err = check_gradients(loss, model.parameters(), samples=24, seed=3)
    assert err < 1e-3
