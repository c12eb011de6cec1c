"""Containers for model outputs shared by the policy and the simulator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True)
class TrajectoryDistribution:
    """N candidate SDV plans ``[N, T_s, 7]`` (x, y, theta, v, a, k, j) with probabilities."""

    trajectories: np.ndarray
    probabilities: np.ndarray
    logits: np.ndarray

    @classmethod
    def from_logits(cls, trajectories, logits) -> "TrajectoryDistribution":
        logits = np.asarray(logits, float)
        return cls(np.asarray(trajectories, float), softmax(logits), logits)

    @property
    def num_modes(self) -> int:
        return len(self.probabilities)

    @property
    def horizon(self) -> int:
        return self.trajectories.shape[1]


@dataclass(frozen=True)
class AgentPredictionSet:
    """Per-agent M trajectories ``[A, M, T_a, 3]`` with probabilities ``[A, M]``."""

    agent_ids: tuple
    trajectories: np.ndarray
    probabilities: np.ndarray
    logits: np.ndarray

    @classmethod
    def from_logits(cls, agent_ids, trajectories, logits) -> "AgentPredictionSet":
        trajectories = np.asarray(trajectories, float)
        logits = np.asarray(logits, float).reshape(trajectories.shape[:2])
        probs = softmax(logits) if len(agent_ids) else logits.copy()
        return cls(tuple(agent_ids), trajectories, probs, logits)

    @classmethod
    def empty(cls, num_modes: int = 1, horizon: int = 30) -> "AgentPredictionSet":
        return cls((), np.zeros((0, num_modes, horizon, 3)), np.zeros((0, num_modes)), np.zeros((0, num_modes)))

    def __len__(self):
        return len(self.agent_ids)

    def most_probable(self) -> np.ndarray:
        """``[A, T_a, 3]`` trajectory of each agent's most probable mode (ties: lowest index)."""
        if not len(self):
            return self.trajectories[:, 0]
        best = np.argmax(self.probabilities, axis=1)
        return self.trajectories[np.arange(len(self)), best]


@dataclass(frozen=True)
class Prediction:
    sdv: TrajectoryDistribution
    agents: AgentPredictionSet
