"""Choosing one SDV trajectory from the predicted mixture."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import PolicyError
from .geometry import collision_matrix
from .prediction import AgentPredictionSet, TrajectoryDistribution
from .scene import DT


class PolicyKind(enum.Enum):
    MIN_COST = "MinCost"
    MIN_COST_CC = "MinCostCC"

    @classmethod
    def parse(cls, value) -> "PolicyKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if value in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown policy {value!r}")


@dataclass(frozen=True)
class PolicyConfig:
    alpha_collision: float = 1.0
    contact_margin: float = 0.0
    policy: PolicyKind = PolicyKind.MIN_COST_CC
    check_all_modes: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policy", PolicyKind.parse(self.policy))
        if not (self.alpha_collision > 0 and math.isfinite(self.alpha_collision)):
            raise ValueError("alpha_collision must be positive")
        if not (self.contact_margin >= 0 and math.isfinite(self.contact_margin)):
            raise ValueError("contact_margin must be non-negative")

    def to_dict(self) -> dict:
        return {"alpha_collision": self.alpha_collision, "contact_margin": self.contact_margin,
                "policy": self.policy.value, "check_all_modes": self.check_all_modes}

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(**d)


@dataclass(frozen=True)
class Selection:
    index: int
    costs: np.ndarray
    tbar: Optional[np.ndarray] = None   # first collision step per candidate (T_s + 1 when free)


def min_cost_select(dist: TrajectoryDistribution) -> int:
    """Most probable candidate (cost ``-p``); ties go to the smallest index."""
    return int(np.argmin(-np.asarray(dist.probabilities)))


def first_collision_steps(sdv_trajs, sdv_size, agent_trajs, agent_sizes, margin: float = 0.0) -> np.ndarray:
    """Per-candidate first colliding step with ``T + 1`` standing in for "never"."""
    sdv_trajs = np.asarray(sdv_trajs)
    t = sdv_trajs.shape[1]
    hits = collision_matrix(sdv_trajs, sdv_size, agent_trajs, agent_sizes, margin).any(axis=1)
    return np.where(hits.any(axis=1), np.argmax(hits, axis=1) + 1, t + 1)


def min_cost_cc_select(dist: TrajectoryDistribution, agent_preds: AgentPredictionSet, sdv_size,
                       agent_sizes: Sequence, config: PolicyConfig = PolicyConfig()) -> Selection:
    """Collision-aware selection: cost ``-p_i - alpha * tbar_i * dt``.

    Each agent is represented by its most probable predicted trajectory
    (or all modes when ``config.check_all_modes``). Candidates without a
    predicted collision get ``tbar = T_s + 1``.
    """
    p = np.asarray(dist.probabilities, float)
    if agent_preds is None or len(agent_preds) == 0:
        costs = -p
        return Selection(int(np.argmin(costs)), costs, None)
    if len(agent_sizes) != len(agent_preds):
        raise PolicyError(f"{len(agent_sizes)} agent sizes for {len(agent_preds)} predicted agents")
    if config.check_all_modes:
        trajs = list(agent_preds.trajectories.reshape(-1, *agent_preds.trajectories.shape[2:]))
        sizes = np.repeat(np.asarray(agent_sizes, float), agent_preds.trajectories.shape[1], axis=0)
    else:
        trajs = list(agent_preds.most_probable())
        sizes = np.asarray(agent_sizes, float)
    tbar = first_collision_steps(dist.trajectories, sdv_size, trajs, sizes, config.contact_margin)
    costs = -p - config.alpha_collision * tbar * DT
    return Selection(int(np.argmin(costs)), costs, tbar)


def select(dist: TrajectoryDistribution, agent_preds: AgentPredictionSet, sdv_size, agent_sizes,
           config: PolicyConfig = PolicyConfig()) -> Selection:
    if config.policy is PolicyKind.MIN_COST:
        return Selection(min_cost_select(dist), -np.asarray(dist.probabilities, float), None)
    return min_cost_cc_select(dist, agent_preds, sdv_size, agent_sizes, config)


def dominance_alpha(probabilities, dt: float = DT) -> float:
    """Smallest alpha above which any collision-free candidate beats every colliding one.

    A free candidate has ``tbar`` at least one step later than any collision,
    so alpha must cover the largest probability gap over one step.
    """
    p = np.asarray(probabilities, float)
    return float((p.max() - p.min()) / dt)
