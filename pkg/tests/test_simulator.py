import json
import math

import numpy as np
import pytest

from moeplan.errors import PolicyError
from moeplan.geometry import OrientedBox, sat_overlap
from moeplan.policy import PolicyConfig
from moeplan.prediction import AgentPredictionSet, Prediction, TrajectoryDistribution
from moeplan.scenarios import generate_scenarios
from moeplan.scene import Pose2D, to_local, to_parent
from moeplan.simulator import (EpisodeMetrics, SimTrace, aggregate, compute_metrics, debounce, execute_first_step,
                               fixed_expert_rollout, load_traces, run_closed_loop, run_episodes, score_prediction,
                               summary_report, sustained_runs, write_traces)
from moeplan.stubs import FailingPlanner, OraclePlanner, TargetPlanner, full_brake_planner


@pytest.fixture(scope="module")
def lead_episode():
    return generate_scenarios("LeadVehicle", 1, seed=11)[0]


@pytest.fixture(scope="module")
def oracle_run(lead_episode):
    return run_closed_loop(lead_episode, OraclePlanner())


def test_oracle_reproduces_the_log(lead_episode, oracle_run):
    ep = lead_episode
    executed = oracle_run.trace.executed_states()
    logged = ep.sdv_log[ep.start_tick + 1:ep.start_tick + 1 + ep.num_ticks]
    assert len(executed) == ep.num_ticks
    assert np.max(np.abs(executed[:, :2] - logged[:, :2])) < 1e-6
    m = oracle_run.metrics
    assert m.passiveness_events == 0 and m.aggressiveness_events == 0 and m.estimated_contacts == 0


def test_log_identical_trace_has_zero_counts(lead_episode, oracle_run):
    m = oracle_run.metrics
    for name in EpisodeMetrics.COUNTS:
        if name != "close_calls":
            assert getattr(m, name) == 0
    assert m.miles_driven > 0


def test_agents_replay_logged_poses_exactly(lead_episode, oracle_run):
    ep = lead_episode
    for rec in oracle_run.trace.records:
        k = ep.start_tick + rec["tick"] + 1
        for i, agent_id in enumerate(ep.agent_ids):
            assert rec["agent_poses"][agent_id] == ep.agent_tracks[i, k].tolist()


def test_executed_state_is_the_first_plan_step(oracle_run):
    for rec in oracle_run.trace.records:
        origin = Pose2D(*rec["sdv_state"][:3])
        plan0 = np.asarray(rec["plan_first_step"])
        pose = to_parent(plan0[None, :3], origin)[0]
        assert rec["executed"] == [pose[0], pose[1], pose[2], plan0[3], plan0[4]]


def test_full_brake_stops_and_becomes_passive():
    ep = generate_scenarios("StraightRoad", 1, seed=12)[0]
    res = run_closed_loop(ep, full_brake_planner())
    speeds = res.trace.executed_states()[:, 3]
    assert speeds[-1] == 0.0
    assert np.all(np.diff(speeds) <= 1e-12)
    # by hand: passive once the logged speed exceeds the simulated one by 5 m/s
    log_v = ep.sdv_log[ep.start_tick + 1:ep.start_tick + 1 + ep.num_ticks, 3]
    lagging = log_v - speeds >= 5.0
    assert lagging.any()
    assert res.metrics.passiveness_events == debounce(lagging, 10) >= 1
    assert res.metrics.discomfort_brakes >= 1


def test_contact_matches_offline_sat_scan():
    ep = generate_scenarios("LeadVehicle", 1, seed=13)[0]
    res = run_closed_loop(ep, TargetPlanner(ep.agent_ids[0], speed=25.0))
    flags = [r["events"]["contact"] for r in res.trace.records]
    assert any(flags)
    offline = []
    for rec in res.trace.records:
        sdv = OrientedBox.from_size(Pose2D(*rec["executed"][:3]), ep.sdv_size)
        hit = False
        for i, agent_id in enumerate(ep.agent_ids):
            pose = rec["agent_poses"].get(agent_id)
            if pose is not None:
                hit |= sat_overlap(sdv, OrientedBox.from_size(Pose2D(*pose), ep.agent_sizes[i]), 0.05)
        offline.append(hit)
    assert flags == offline
    assert res.metrics.estimated_contacts == debounce(offline, 10) >= 1


def test_online_metrics_equal_a_rescan_of_the_saved_trace(tmp_path):
    ep = generate_scenarios("CutIn", 1, seed=14, adversarial=True)[0]
    res = run_closed_loop(ep, full_brake_planner())
    path = tmp_path / "trace.jsonl"
    write_traces(path, [res.trace])
    (trace,) = load_traces(path)
    assert trace.records == json.loads(json.dumps(res.trace.records))
    assert compute_metrics(trace, ep) == res.metrics


def test_braking_plateau_counts_once(lead_episode):
    ep = lead_episode
    records = []
    for t in range(40):
        k = ep.start_tick + t
        state = ep.sdv_log[k + 1].copy()
        if 10 <= t < 15:
            state[4] = -4.0
        records.append({"tick": t, "sdv_state": ep.sdv_log[k].tolist(), "executed": state.tolist()})
    m = compute_metrics(SimTrace(ep.episode_id, "synthetic", records), ep)
    assert m.discomfort_brakes == 1


def test_sustained_runs_and_debounce():
    assert sustained_runs([0, 1, 1, 0, 1, 1, 1, 0], 3) == 1
    assert sustained_runs([1, 1, 1], 3) == 1
    assert debounce([1, 0, 0, 1], 10) == 1
    assert debounce([1] + [0] * 10 + [1], 10) == 2
    assert debounce([], 10) == 0


def test_min_errors_with_constant_offset():
    ep = generate_scenarios("StraightRoad", 1, seed=15)[0]
    scene = ep.scene_at(0)
    origin = scene.sdv.pose
    local = OraclePlanner(num_modes=1).predict(scene)
    traj = local.sdv.trajectories.copy()
    traj[..., 1] += 1.0
    agents = local.agents.trajectories.copy()
    gt_local = []
    for i in range(len(scene.agents)):
        gt_local.append(to_local(scene.ground_truth.agent_futures[i], origin))
    agents = np.array(gt_local)[:, None].copy() if gt_local else agents
    if len(agents):
        agents[..., 0] += 1.0
    pred = Prediction(TrajectoryDistribution.from_logits(traj, [0.0]),
                      AgentPredictionSet.from_logits(local.agents.agent_ids, agents, np.zeros(agents.shape[:2])))
    score = score_prediction(pred, scene, origin)
    assert score["sdv"] == pytest.approx((1.0, 1.0))
    for ade, fde in score["agents"]:
        assert ade == pytest.approx(1.0) and fde == pytest.approx(1.0)


def test_simulation_is_deterministic(lead_episode):
    a = run_closed_loop(lead_episode, TargetPlanner(lead_episode.agent_ids[0]))
    b = run_closed_loop(lead_episode, TargetPlanner(lead_episode.agent_ids[0]))
    assert a.trace.records == b.trace.records
    assert a.metrics == b.metrics


def test_planner_failure_aborts_with_partial_trace(lead_episode):
    res = run_closed_loop(lead_episode, FailingPlanner(OraclePlanner(), fail_at=7))
    assert res.trace.aborted and "planner failure" in res.trace.error
    assert len(res.trace.records) == 7
    assert res.metrics.aborted == 1


class _FailsOnRoute:
    """Planner that raises only for scenes whose route starts at ``x``."""

    def __init__(self, x):
        self.x = x

    def predict(self, scene):
        if scene.route.points[0, 0] == self.x:
            raise RuntimeError("planner failure")
        return OraclePlanner().predict(scene)


def test_failure_in_one_episode_leaves_others_running():
    eps = generate_scenarios("StraightRoad", 2, seed=16)
    results = run_episodes(eps, _FailsOnRoute(eps[0].route.points[0, 0]), max_ticks=10)
    assert results[0].trace.aborted and len(results[0].trace.records) == 0
    assert not results[1].trace.aborted and len(results[1].trace.records) == 10


def test_fixed_experts_with_replicated_oracle_agree(lead_episode):
    metrics = [fixed_expert_rollout(lead_episode, OraclePlanner(num_modes=3), k, max_ticks=30) for k in range(3)]
    assert metrics[0] == metrics[1] == metrics[2]


def test_fixed_expert_out_of_range():
    from moeplan.model import MixturePlanner, ModelConfig
    ep = generate_scenarios("StraightRoad", 1, seed=17)[0]
    model = MixturePlanner(ModelConfig(num_sdv_modes=3, a_max=2, e_max=8))
    with pytest.raises(PolicyError):
        fixed_expert_rollout(ep, model, 3, max_ticks=2)
    with pytest.raises(PolicyError):
        fixed_expert_rollout(ep, OraclePlanner(num_modes=3), -1, max_ticks=2)
    with pytest.raises(PolicyError):
        fixed_expert_rollout(ep, OraclePlanner(num_modes=3), 3, max_ticks=2)


def test_mincostcc_equals_mincost_without_agents():
    ep = generate_scenarios("StraightRoad", 4, seed=18)
    free = [e for e in ep if not e.agent_ids]
    assert free
    a = run_episodes(free, OraclePlanner(), PolicyConfig(policy="MinCost"), max_ticks=20)
    b = run_episodes(free, OraclePlanner(), PolicyConfig(policy="MinCostCC"), max_ticks=20)
    for x, y in zip(a, b):
        assert x.trace.executed_states().tolist() == y.trace.executed_states().tolist()


def test_execute_first_step_in_rotated_frame():
    state = np.array([10.0, -2.0, math.pi / 2, 5.0, 0.0])
    plan = np.array([[0.5, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0]])
    np.testing.assert_allclose(execute_first_step(state, plan), [10.0, -1.5, math.pi / 2, 5.0, 0.0], atol=1e-12)


def test_aggregation_and_report():
    a = EpisodeMetrics(estimated_contacts=1, miles_driven=0.5, sdv_ade_sum=2.0, sdv_count=2)
    b = EpisodeMetrics(estimated_contacts=2, miles_driven=1.5, sdv_ade_sum=1.0, sdv_count=1)
    total = aggregate([a, b])
    assert total.estimated_contacts == 3 and total.episodes == 2
    assert total.per_1k_miles("estimated_contacts") == pytest.approx(1500.0)
    assert total.min_ade_3s_sdv == pytest.approx(1.0)
    text = summary_report(total)
    assert "estimated_contacts: 3 (1500.00 per 1k miles)" in text
    assert math.isnan(EpisodeMetrics.zero().min_ade_3s_agent)
