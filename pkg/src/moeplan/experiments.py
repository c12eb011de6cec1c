"""Training/evaluation recipes shared by the CLI, scripts and acceptance tests."""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import MixturePlanner, ModelConfig
from .policy import PolicyConfig, PolicyKind
from .scenarios import Episode, generate_mixture, generate_scenarios
from .scene import to_local
from .simulator import EpisodeMetrics, aggregate, fixed_expert_episodes, run_episodes
from .training import LossWeights, PerturbConfig, TrainConfig, train

POLICIES = (PolicyKind.MIN_COST, PolicyKind.MIN_COST_CC)
DATA_FRACTIONS = (0.1, 0.25, 0.5, 1.0)
TRAINING_KINDS = ("StraightRoad", "LeadVehicle", "CutIn", "Intersection")
ADVERSARIAL_KINDS = ("LeadVehicle", "CutIn", "Intersection")
METRIC_COLUMNS = ("estimated_contacts", "close_calls", "discomfort_brakes", "passiveness_events",
                  "aggressiveness_events")


def scenes_from_episodes(episodes: Sequence[Episode], stride: int = 10, offset: int = 0) -> list:
    """Training scenes cut from every ``stride``-th tick of each episode."""
    return [ep.scene_at(t) for ep in episodes for t in range(offset, ep.num_ticks, stride)]


def subset(items: Sequence, fraction: float, seed: int = 0) -> list:
    """Nested random subset: a smaller fraction is always a prefix of a larger one."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    order = np.random.default_rng(seed).permutation(len(items))
    k = max(1, int(round(fraction * len(items))))
    return [items[i] for i in order[:k]]


@dataclass
class Recipe:
    """Everything needed to train one model variant."""

    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(perturb=PerturbConfig()))
    use_probability: bool = True
    data_fraction: float = 1.0


def desk_recipe(**model_overrides) -> Recipe:
    """Recipe used by the experiment scripts: desk widths, sharpened logits, perturbed training."""
    model = ModelConfig(a_max=6, e_max=20, logit_gain=10.0, **model_overrides)
    return Recipe(model=model, train=TrainConfig(epochs=40, batch_size=32, perturb=PerturbConfig()))


def training_scenes(num_episodes: int = 200, seed: int = 0) -> list:
    """Mixed logged drives cut into scenes every second (10 scenes per 10 s episode)."""
    return scenes_from_episodes(generate_mixture(TRAINING_KINDS, num_episodes, seed=seed))


def adversarial_suite(num_episodes: int = 50, seed: int = 100) -> list:
    """Episodes whose agents are timed to interact with the SDV."""
    return generate_mixture(ADVERSARIAL_KINDS, num_episodes, seed=seed, adversarial=True)


def variant_recipe(base: Recipe, name: str) -> Recipe:
    """Recipe for a named ablation variant: baseline, no_prob, M1, N1 or dataXX."""
    if name == "baseline":
        return base
    if name == "no_prob":
        return replace(base, use_probability=False)
    if name == "M1":
        return replace(base, model=replace(base.model, num_agent_modes=1))
    if name == "N1":
        return replace(base, model=replace(base.model, num_sdv_modes=1))
    if name.startswith("data"):
        # Same number of optimizer steps as the full-data run: smaller subsets get proportionally more epochs.
        fraction = float(name[4:]) / 100.0
        epochs = max(1, round(base.train.epochs / fraction))
        return replace(base, data_fraction=fraction, train=replace(base.train, epochs=epochs))
    raise ValueError(f"unknown variant {name!r}")


def train_recipe(recipe: Recipe, scenes: Sequence, out_dir=None):
    data = subset(scenes, recipe.data_fraction, recipe.train.seed) if recipe.data_fraction < 1 else list(scenes)
    return train(data, recipe.model, recipe.weights, recipe.train, out_dir=out_dir,
                 use_probability=recipe.use_probability)


def evaluate(model, episodes: Sequence[Episode], policy: PolicyConfig, max_ticks: Optional[int] = None) -> tuple:
    """Aggregate metrics and per-episode results for one policy."""
    results = run_episodes(episodes, model, policy, max_ticks=max_ticks)
    return aggregate([r.metrics for r in results]), results


def evaluate_policies(model, episodes, alpha: float = 1.0, max_ticks: Optional[int] = None) -> dict:
    return {kind: evaluate(model, episodes, PolicyConfig(alpha_collision=alpha, policy=kind), max_ticks)
            for kind in POLICIES}


def table_row(name: str, per_policy: dict) -> dict:
    row = {"variant": name}
    for kind, (metrics, _) in per_policy.items():
        tag = kind.value
        for col in METRIC_COLUMNS:
            row[f"{col}_{tag}"] = getattr(metrics, col)
            row[f"{col}_per_1k_{tag}"] = metrics.per_1k_miles(col)
        row[f"miles_{tag}"] = metrics.miles_driven
    cc = per_policy.get(PolicyKind.MIN_COST_CC) or next(iter(per_policy.values()))
    row["sdv_min_ade_3s"] = cc[0].min_ade_3s_sdv
    row["agent_min_ade_3s"] = cc[0].min_ade_3s_agent
    row["agent_min_fde_3s"] = cc[0].min_fde_3s_agent
    return row


def expert_profiles(model: MixturePlanner, episodes: Sequence[Episode], max_ticks: Optional[int] = None) -> list:
    """Per-expert passiveness/aggressiveness when one expert is always executed."""
    rows = []
    for k in range(model.config.num_sdv_modes):
        m = aggregate([r.metrics for r in fixed_expert_episodes(episodes, model, k, max_ticks=max_ticks)])
        rows.append({"expert": k, "passiveness_per_1k": m.per_1k_miles("passiveness_events"),
                     "aggressiveness_per_1k": m.per_1k_miles("aggressiveness_events"),
                     "estimated_contacts": m.estimated_contacts, "miles": m.miles_driven,
                     "passiveness_events": m.passiveness_events,
                     "aggressiveness_events": m.aggressiveness_events})
    return rows


def agent_mode_errors(model, scenes: Sequence) -> np.ndarray:
    """Per-mode agent ADE ``[samples, M]`` over the agent horizon, one row per valid agent future."""
    rows = []
    for scene, pred in zip(scenes, model.predict_batch(list(scenes))):
        origin = scene.sdv.pose
        index = {a.agent_id: i for i, a in enumerate(scene.agents)}
        gt = scene.ground_truth
        for j, agent_id in enumerate(pred.agents.agent_ids):
            i = index[agent_id]
            valid = gt.agent_valid[i]
            if not valid.any():
                continue
            fut = to_local(gt.agent_futures[i], origin)[valid, :2]
            d = np.linalg.norm(pred.agents.trajectories[j][:, valid, :2] - fut, axis=-1)
            rows.append(d.mean(axis=1))
    return np.array(rows)


TURN_TICKS = (0, 2, 4)


def turn_scenes(num_train: int = 300, num_eval: int = 100) -> tuple:
    """Training and held-out TurnBimodal scenes cut while the turn direction is still hidden."""
    train_eps = generate_scenarios("TurnBimodal", num_train, seed=0)
    eval_eps = generate_scenarios("TurnBimodal", num_eval, seed=1)
    cut = lambda eps: [ep.scene_at(t) for ep in eps for t in TURN_TICKS]
    return cut(train_eps), cut(eval_eps)


@dataclass
class ModeDiversityResult:
    min_ade: dict          # agent modes -> mean min-over-modes ADE
    win_fractions: dict    # agent modes -> share of samples won by each expert
    seconds: float


def mode_diversity(train_scenes: Sequence, eval_scenes: Sequence, model_config: ModelConfig,
                   train_config: TrainConfig, modes: Sequence[int] = (2, 1)) -> ModeDiversityResult:
    """Train identical models that differ only in the number of agent modes and compare agent minADE."""
    start = time.perf_counter()
    min_ade, wins = {}, {}
    for m in modes:
        model = train(train_scenes, replace(model_config, num_agent_modes=m), train_config=train_config).model
        errors = agent_mode_errors(model, eval_scenes)
        min_ade[m] = float(errors.min(axis=1).mean())
        wins[m] = (np.bincount(errors.argmin(axis=1), minlength=m) / len(errors)).tolist()
    return ModeDiversityResult(min_ade, wins, time.perf_counter() - start)


class TableWriter:
    """Tab-separated output that is flushed row by row, so partial results survive an abort."""

    def __init__(self, path):
        self.path = Path(path)
        self.fh = None
        self.writer = None

    def write(self, row: dict):
        if self.writer is None:
            self.fh = open(self.path, "w", newline="")
            self.writer = csv.DictWriter(self.fh, fieldnames=list(row), delimiter="\t")
            self.writer.writeheader()
        self.writer.writerow({k: _fmt(v) for k, v in row.items()})
        self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6g}"
    return v


def read_table(path) -> list:
    with open(path) as fh:
        return list(csv.DictReader(fh, delimiter="\t"))


def contacts(per_policy: dict, kind: PolicyKind) -> int:
    return per_policy[kind][0].estimated_contacts


def per_episode_contacts(per_policy: dict, kind: PolicyKind) -> list:
    return [r.metrics.estimated_contacts for r in per_policy[kind][1]]


__all__ = ["Recipe", "desk_recipe", "training_scenes", "adversarial_suite", "variant_recipe", "train_recipe", "evaluate", "evaluate_policies", "scenes_from_episodes",
           "subset", "expert_profiles", "mode_diversity", "turn_scenes", "agent_mode_errors", "TableWriter", "read_table", "EpisodeMetrics", "DATA_FRACTIONS"]
