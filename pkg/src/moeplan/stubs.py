"""Hand-written planners with known behaviour, for checking the simulator and policies."""
from __future__ import annotations

import numpy as np

from .kinematics import rollout_states
from .prediction import AgentPredictionSet, Prediction, TrajectoryDistribution
from .scene import DT, Pose2D, to_local


def _agents_constant(scene, num_modes: int, horizon: int) -> AgentPredictionSet:
    """Each agent continues at the velocity implied by its last two history poses."""
    origin = scene.sdv.pose
    ids, trajs = [], []
    for agent in scene.agents:
        hist = agent.pose_history
        vel = (hist[-1, :2] - hist[-2, :2]) / DT if len(hist) > 1 else np.zeros(2)
        t = np.arange(1, horizon + 1)[:, None] * DT
        world = np.concatenate([hist[-1, :2] + vel * t, np.full((horizon, 1), hist[-1, 2])], -1)
        ids.append(agent.agent_id)
        trajs.append(np.repeat(to_local(world, origin)[None], num_modes, axis=0))
    arr = np.array(trajs).reshape(len(ids), num_modes, horizon, 3)
    return AgentPredictionSet.from_logits(ids, arr, np.zeros((len(ids), num_modes)))


def _peaked_logits(n: int, best: int = 0) -> np.ndarray:
    logits = np.full(n, -50.0)
    logits[best] = 50.0
    return logits


class OraclePlanner:
    """Replays the logged SDV future (from the scene's ground truth) in every mode, probability on mode 0."""

    def __init__(self, num_modes: int = 10, num_agent_modes: int = 1, agent_horizon: int = 30):
        self.num_modes = num_modes
        self.num_agent_modes = num_agent_modes
        self.agent_horizon = agent_horizon

    def predict(self, scene) -> Prediction:
        origin = scene.sdv.pose
        fut = np.asarray(scene.ground_truth.sdv_future, float)
        local = to_local(fut[:, :3], origin)
        local[:, 2] = fut[:, 2] - origin.theta
        traj = np.concatenate([local, fut[:, 3:5], np.zeros((len(fut), 2))], -1)
        trajs = np.repeat(traj[None], self.num_modes, axis=0)
        sdv = TrajectoryDistribution.from_logits(trajs, _peaked_logits(self.num_modes))
        return Prediction(sdv, _agents_constant(scene, self.num_agent_modes, self.agent_horizon))


class ControlPlanner:
    """Rolls out fixed per-mode (jerk, curvature) sequences from the current SDV state.

    ``controls`` is ``[N, T, 2]``; ``logits`` defaults to uniform.
    """

    def __init__(self, controls, logits=None, agent_modes: int = 1, agent_horizon: int = 30):
        self.controls = np.asarray(controls, float)
        self.logits = np.zeros(len(self.controls)) if logits is None else np.asarray(logits, float)
        self.agent_modes = agent_modes
        self.agent_horizon = agent_horizon

    def predict(self, scene) -> Prediction:
        s = scene.sdv
        initial = np.array([0.0, 0.0, 0.0, s.speed, s.acceleration])
        states, _ = rollout_states(initial, self.controls[..., 0], self.controls[..., 1], DT)
        trajs = np.concatenate([states, self.controls[..., [1, 0]]], -1)
        sdv = TrajectoryDistribution.from_logits(trajs, self.logits)
        return Prediction(sdv, _agents_constant(scene, self.agent_modes, self.agent_horizon))


def full_brake_planner(horizon: int = 45, jerk: float = -15.0) -> ControlPlanner:
    return ControlPlanner(np.stack([np.full(horizon, jerk), np.zeros(horizon)], -1)[None])


class TargetPlanner:
    """Steers straight at the current position of one logged agent at a fixed speed."""

    def __init__(self, agent_id: str, speed: float = 10.0, horizon: int = 45):
        self.agent_id = agent_id
        self.speed = speed
        self.horizon = horizon

    def predict(self, scene) -> Prediction:
        origin = scene.sdv.pose
        target = next((a for a in scene.agents if a.agent_id == self.agent_id), None)
        goal = np.array([1.0, 0.0]) if target is None else to_local(target.pose_history[-1:], origin)[0, :2]
        heading = float(np.arctan2(goal[1], goal[0]))
        t = np.arange(1, self.horizon + 1) * DT
        xy = np.stack([np.cos(heading) * self.speed * t, np.sin(heading) * self.speed * t], -1)
        traj = np.concatenate([xy, np.full((self.horizon, 1), heading), np.full((self.horizon, 1), self.speed),
                               np.zeros((self.horizon, 3))], -1)
        sdv = TrajectoryDistribution.from_logits(traj[None], np.zeros(1))
        return Prediction(sdv, _agents_constant(scene, 1, 30))


class FailingPlanner:
    """Raises on the ``fail_at``-th call, otherwise delegates."""

    def __init__(self, inner, fail_at: int):
        self.inner = inner
        self.fail_at = fail_at
        self.calls = 0

    def predict(self, scene) -> Prediction:
        self.calls += 1
        if self.calls > self.fail_at:
            raise RuntimeError("planner failure")
        return self.inner.predict(scene)


__all__ = ["OraclePlanner", "ControlPlanner", "TargetPlanner", "FailingPlanner", "full_brake_planner", "Pose2D"]
