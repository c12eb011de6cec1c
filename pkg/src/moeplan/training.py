"""Winner-takes-all losses, data augmentation and the training loop."""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .diff import tensor as ops
from .diff.optim import OptimizerState, adam_step, cosine_lr, zero_grad
from .diff.tensor import Tensor, as_tensor
from .errors import MatchError, NumericsError, NumericsWarning, TrainingError
from .model import MixturePlanner, ModelConfig, ModelOutput, save_model
from .scene import DT, GroundTruth, Pose2D, VectorScene, stack_flat, transform_to_sdv_frame

PROB_FLOOR = 1e-12


@dataclass
class LossWeights:
    lambda_sdv: float = 1.0
    beta_sdv: float = 1.0
    mu_sdv: float = 1.0
    lambda_agent: float = 0.04
    beta_agent: float = 0.0
    mu_agent: float = 0.04
    alpha_agent_loss: float = 10.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not (value >= 0 and math.isfinite(value)):
                raise ValueError(f"{name} must be finite and non-negative, got {value}")


@dataclass
class PerturbConfig:
    probability: float = 0.5
    max_lateral: float = 1.0
    max_heading: float = 0.2
    max_speed: float = 1.5
    max_accel: float = 2.0
    blend_horizon: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.blend_horizon <= 0:
            raise ValueError("blend_horizon must be positive")


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    perturb: Optional[PerturbConfig] = None


# --------------------------------------------------------------------------
# imitation / matching / WTA

def _wrap_offset(d_theta: np.ndarray) -> np.ndarray:
    """Constant shift that maps ``d_theta`` into (-pi, pi]; adding it keeps the gradient at 1."""
    wrapped = d_theta - 2 * np.pi * np.ceil((d_theta - np.pi) / (2 * np.pi))
    return wrapped - d_theta


def _imitation_terms(traj: Tensor, gt: np.ndarray, mask: np.ndarray) -> Tensor:
    """Masked L1 over (x, y, wrapped theta), summed over time. ``traj`` ``[..., T, >=3]``."""
    gt = np.asarray(gt, float)
    xy = ops.absolute(traj[..., :2] - gt[..., :2])
    d_theta = traj[..., 2] - gt[..., 2]
    th = ops.absolute(d_theta + _wrap_offset(d_theta.data))
    per_step = ops.tsum(xy, axis=-1) + th
    return ops.tsum(ops.masked_fill(per_step, ~mask, 0.0), axis=-1)


def _regularizer(controls: Tensor) -> Tensor:
    """mean(j^2) + mean(k^2) over the horizon for ``[..., T, 2]`` controls."""
    sq = ops.square(controls)
    return ops.tsum(ops.mean(sq, axis=-2), axis=-1)


def imitation_loss(traj, gt, mask=None, beta: float = 0.0, controls=None) -> Tensor:
    """Imitation loss of one or more trajectories against the same ground truth.

    ``traj`` is ``[..., T, >=3]`` (x, y, theta first), ``gt`` ``[T, >=3]`` and
    ``mask`` ``[T]`` marks valid steps. ``controls`` ``[..., T, 2]`` adds
    ``beta * (mean j^2 + mean k^2)``. Returns a tensor of shape ``[...]``.
    """
    traj = as_tensor(traj)
    gt = np.asarray(gt, float)
    if traj.shape[-2] != gt.shape[-2]:
        raise MatchError(f"horizon mismatch: prediction {traj.shape[-2]} vs ground truth {gt.shape[-2]}")
    mask = np.ones(gt.shape[:-1], bool) if mask is None else np.asarray(mask, bool)
    if not mask.any(axis=-1).all():
        raise MatchError("ground truth has no valid steps")
    loss = _imitation_terms(traj, gt, np.broadcast_to(mask, traj.shape[:-1]))
    if controls is not None and beta:
        loss = loss + ops.scale(_regularizer(as_tensor(controls)), beta)
    return loss


def matching_costs(il_losses, probabilities, lam: float) -> np.ndarray:
    """``L_IL + lam * (1 - p)`` per candidate."""
    return np.asarray(il_losses, float) + lam * (1.0 - np.asarray(probabilities, float))


def select_winner(trajectories, probabilities, gt, lam: float = 1.0, beta: float = 0.0, mask=None,
                  controls=None) -> int:
    """Index of the candidate with the smallest matching cost; ties go to the smallest index."""
    il = imitation_loss(trajectories, gt, mask, beta, controls).data
    return int(np.argmin(matching_costs(il, probabilities, lam)))


def _winner_nll(logits: Tensor, winners: np.ndarray, valid: Optional[np.ndarray] = None):
    """``-log p_winner`` along the last axis, with the probability clamped at PROB_FLOOR."""
    logp = ops.log_softmax(logits, axis=-1)
    chosen = ops.take_along_axis(logp, winners[..., None], axis=-1)[..., 0]
    clamped = chosen.data < math.log(PROB_FLOOR)
    if valid is not None:
        clamped &= valid
    if clamped.any():
        warnings.warn("winner probability below 1e-12; clamped inside the log", NumericsWarning, stacklevel=3)
        chosen = ops.masked_fill(chosen, clamped, math.log(PROB_FLOOR))
    return -chosen


def wta_loss(trajectories, logits, gt, lam: float = 1.0, beta: float = 0.0, mu: float = 1.0, mask=None,
             controls=None):
    """Winner-takes-all loss for a single set of candidates.

    Returns ``(loss, winner)``. Only the winner's imitation term carries
    gradient; the probability term reaches every logit through the softmax.
    """
    logits = as_tensor(logits)
    il = imitation_loss(trajectories, gt, mask, beta, controls)
    probs = np.exp(logits.data - logits.data.max())
    probs /= probs.sum()
    winner = int(np.argmin(matching_costs(il.data, probs, lam)))
    loss = il[winner] + ops.scale(_winner_nll(logits, np.array(winner)), mu)
    return loss, winner


# --------------------------------------------------------------------------
# batched losses

@dataclass
class BatchTargets:
    sdv: np.ndarray          # [B, T_s, >=3]
    sdv_valid: np.ndarray    # [B, T_s]
    agents: np.ndarray       # [B, A, T_a, 3]
    agent_valid: np.ndarray  # [B, A, T_a]


def targets_for(scene: VectorScene, flat, config: ModelConfig):
    """Ground truth arranged in network slot order for an SDV-frame scene."""
    gt = scene.ground_truth
    if gt is None or gt.sdv_future is None or len(gt.sdv_future) == 0:
        raise TrainingError("scene has no SDV ground truth")
    t_s, t_a, a_max = config.sdv_horizon, config.agent_horizon, config.a_max
    sdv = np.zeros((t_s, 5))
    sdv_valid = np.zeros(t_s, bool)
    n = min(t_s, len(gt.sdv_future))
    sdv[:n] = gt.sdv_future[:n, :5]
    sdv_valid[:n] = True
    agents = np.zeros((a_max, t_a, 3))
    valid = np.zeros((a_max, t_a), bool)
    for slot, idx in enumerate(flat.agent_index):
        if idx < 0 or idx >= len(gt.agent_futures):
            continue
        m = min(t_a, gt.agent_futures.shape[1])
        agents[slot, :m] = gt.agent_futures[idx, :m, :3]
        valid[slot, :m] = gt.agent_valid[idx, :m]
    return sdv, sdv_valid, agents, valid


def stack_targets(items) -> BatchTargets:
    sdv, sv, ag, av = zip(*items)
    return BatchTargets(np.stack(sdv), np.stack(sv), np.stack(ag), np.stack(av))


@dataclass
class LossBreakdown:
    total: Tensor
    sdv_loss: float
    agent_loss: float
    sdv_winners: np.ndarray       # [B]
    agent_winners: np.ndarray     # [B, A], -1 where the agent was skipped
    sdv_min_ade: float


def _softmax_np(x):
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def total_loss(out: ModelOutput, targets: Optional[BatchTargets], weights: LossWeights = LossWeights(),
               use_probability: bool = True) -> LossBreakdown:
    """Batch mean of ``L_SDV + alpha * mean_agents L_agent``."""
    if targets is None or targets.sdv is None:
        raise TrainingError("SDV ground truth is required")
    w = weights
    sdv_valid = targets.sdv_valid
    if not sdv_valid.any(axis=-1).all():
        raise TrainingError("a sample has no valid SDV ground truth steps")
    # SDV stream: [B, N]
    gt_sdv = targets.sdv[:, None]
    il = _imitation_terms(out.sdv_states, gt_sdv, np.broadcast_to(sdv_valid[:, None], out.sdv_states.shape[:-1]))
    if w.beta_sdv:
        il = il + ops.scale(_regularizer(out.sdv_controls), w.beta_sdv)
    probs = _softmax_np(out.sdv_logits.data)
    lam = w.lambda_sdv if use_probability else 0.0
    winners = np.argmin(matching_costs(il.data, probs, lam), axis=-1)
    sdv_term = ops.take_along_axis(il, winners[:, None], axis=-1)[:, 0]
    if use_probability and w.mu_sdv:
        sdv_term = sdv_term + ops.scale(_winner_nll(out.sdv_logits, winners), w.mu_sdv)

    # agent stream: [B, A, M]
    agent_ok = out.agent_mask & targets.agent_valid.any(axis=-1)
    b = agent_ok.shape[0]
    if agent_ok.any():
        mask = np.broadcast_to((targets.agent_valid & agent_ok[..., None])[:, :, None], out.agent_trajs.shape[:-1])
        a_il = _imitation_terms(out.agent_trajs, targets.agents[:, :, None], mask)
        q = _softmax_np(out.agent_logits.data)
        a_lam = w.lambda_agent if use_probability else 0.0
        a_win = np.argmin(matching_costs(a_il.data, q, a_lam), axis=-1)
        per_agent = ops.take_along_axis(a_il, a_win[..., None], axis=-1)[..., 0]
        if use_probability and w.mu_agent:
            per_agent = per_agent + ops.scale(_winner_nll(out.agent_logits, a_win, agent_ok), w.mu_agent)
        counts = agent_ok.sum(axis=1)
        per_agent = ops.masked_fill(per_agent, ~agent_ok, 0.0)
        agent_term = ops.tsum(per_agent, axis=1) / np.maximum(counts, 1).astype(float)
        a_win = np.where(agent_ok, a_win, -1)
    else:
        agent_term = Tensor(np.zeros(b))
        a_win = np.full(agent_ok.shape, -1)
    per_sample = sdv_term + ops.scale(agent_term, w.alpha_agent_loss)
    total = ops.mean(per_sample)

    d = np.linalg.norm(out.sdv_states.data[..., :2] - gt_sdv[..., :2], axis=-1)
    ade = (d * sdv_valid[:, None]).sum(-1) / sdv_valid.sum(-1)[:, None]
    return LossBreakdown(total, float(np.mean(sdv_term.data)), float(np.mean(agent_term.data)), winners, a_win,
                         float(ade.min(axis=1).mean()))


# --------------------------------------------------------------------------
# augmentation

def smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return 3 * u ** 2 - 2 * u ** 3


def perturb_sample(scene: VectorScene, config: PerturbConfig, rng: np.random.Generator,
                   offsets: Optional[tuple] = None) -> VectorScene:
    """Shift the SDV start sideways / rotate it and blend the future back onto the logged path.

    The initial speed and acceleration are jittered as well while the target
    stays the logged path, so the current acceleration alone does not
    predict the future and the plan has to react to the scene.

    ``offsets`` (lateral, heading[, speed, acceleration]) overrides the random
    draw. The returned scene is in the perturbed SDV's frame.
    """
    gt = scene.ground_truth
    if gt is None or gt.sdv_future is None:
        raise TrainingError("perturbation needs SDV ground truth")
    if offsets is None:
        if rng.random() >= config.probability:
            return scene
        offsets = (rng.uniform(-config.max_lateral, config.max_lateral),
                   rng.uniform(-config.max_heading, config.max_heading),
                   rng.uniform(-config.max_speed, config.max_speed),
                   rng.uniform(-config.max_accel, config.max_accel))
    lateral, heading = float(offsets[0]), float(offsets[1])
    d_speed, d_accel = (float(offsets[2]), float(offsets[3])) if len(offsets) > 2 else (0.0, 0.0)
    pose = scene.sdv.pose
    new_pose = pose.compose(Pose2D(0.0, lateral, heading))
    future = np.array(gt.sdv_future, float)
    t = np.arange(1, len(future) + 1) * DT
    remain = 1.0 - smoothstep(t / config.blend_horizon)
    # lateral offset measured perpendicular to the logged heading at each step
    normal = np.stack([-np.sin(future[:, 2]), np.cos(future[:, 2])], -1)
    future[:, :2] += (lateral * remain)[:, None] * normal
    future[:, 2] += heading * remain
    speed = max(0.0, scene.sdv.speed + d_speed)
    sdv = type(scene.sdv)(new_pose, speed, scene.sdv.acceleration + d_accel, scene.sdv.size,
                          scene.sdv.moving_history)
    new_gt = GroundTruth(future, gt.agent_futures, gt.agent_valid)
    moved = VectorScene(sdv=sdv, agents=scene.agents, map_elements=scene.map_elements, route=scene.route,
                        timestamp=scene.timestamp, ground_truth=new_gt, frame_origin=scene.frame_origin)
    return transform_to_sdv_frame(moved)


# --------------------------------------------------------------------------
# loop

@dataclass
class TrainResult:
    model: MixturePlanner
    log: list = field(default_factory=list)
    checkpoint: Optional[Path] = None


def _prepare(model: MixturePlanner, scenes: Sequence[VectorScene]):
    ready, flats = model.prepare(scenes)
    targets = [targets_for(s, f, model.config) for s, f in zip(ready, flats)]
    return flats, targets


def train(scenes: Sequence[VectorScene], model_config: ModelConfig = None, weights: LossWeights = None,
          train_config: TrainConfig = None, out_dir=None, log_path=None, use_probability: bool = True,
          model: MixturePlanner = None) -> TrainResult:
    """Train a planner on ``scenes`` (each with ground truth).

    Deterministic for a fixed ``train_config.seed``. When ``out_dir`` is given
    a checkpoint plus model card is written after every finite epoch, and a
    metrics log with one JSON record per epoch.
    """
    cfg = train_config or TrainConfig()
    weights = weights or LossWeights()
    if model is None:
        model = MixturePlanner(model_config or ModelConfig())
    mcfg = model.config
    if not scenes:
        raise TrainingError("empty training set")
    for s in scenes:
        if s.ground_truth is None:
            raise TrainingError("every training scene needs ground truth")
    params = model.parameters()
    state = OptimizerState.for_params(params, base_lr=cfg.lr)
    n = len(scenes)
    steps_per_epoch = -(-n // cfg.batch_size)
    total_steps = steps_per_epoch * cfg.epochs
    fixed = None if cfg.perturb else _prepare(model, scenes)
    out_dir = Path(out_dir) if out_dir else None
    ckpt = out_dir / "model.npz" if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = log_path or out_dir / "train_log.jsonl"
    log_fh = open(log_path, "w") if log_path else None
    result = TrainResult(model, [], ckpt)
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            rng = np.random.default_rng([cfg.seed, epoch])
            order = rng.permutation(n)
            sums = np.zeros(4)
            sdv_hist = np.zeros(mcfg.num_sdv_modes, int)
            agent_hist = np.zeros(mcfg.num_agent_modes, int)
            lr = cfg.lr
            for start in range(0, n, cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                if fixed is not None:
                    flats = [fixed[0][i] for i in idx]
                    targets = [fixed[1][i] for i in idx]
                else:
                    batch_scenes = [perturb_sample(scenes[i], cfg.perturb, rng) for i in idx]
                    flats, targets = _prepare(model, batch_scenes)
                out = model(stack_flat(flats))
                parts = total_loss(out, stack_targets(targets), weights, use_probability)
                if not math.isfinite(float(parts.total.data)):
                    raise NumericsError(f"non-finite loss at epoch {epoch}")
                zero_grad(params)
                parts.total.backward()
                lr = cosine_lr(step, total_steps, cfg.lr)
                adam_step(params, state, lr)
                step += 1
                k = len(idx)
                sums += k * np.array([float(parts.total.data), parts.sdv_loss, parts.agent_loss, parts.sdv_min_ade])
                sdv_hist += np.bincount(parts.sdv_winners, minlength=mcfg.num_sdv_modes)
                aw = parts.agent_winners[parts.agent_winners >= 0]
                agent_hist += np.bincount(aw, minlength=mcfg.num_agent_modes)
            means = sums / n
            record = {"epoch": epoch, "total_loss": means[0], "sdv_loss": means[1], "agent_loss": means[2],
                      "lr": lr, "winner_histogram": {"sdv": sdv_hist.tolist(), "agent": agent_hist.tolist()},
                      "sdv_min_ade": means[3]}
            result.log.append(record)
            if log_fh:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            if ckpt:
                save_model(model, ckpt, {"epoch": epoch, "seed": cfg.seed, "loss_weights": asdict(weights),
                                         "use_probability": use_probability})
    finally:
        if log_fh:
            log_fh.close()
    return result


def load_log(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
