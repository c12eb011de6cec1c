"""Joint prediction-and-planning network.

Point encoders compress every polyline to one vector; a transformer encoder
relates all elements; a transformer decoder turns learnable per-expert
queries into SDV plans (jerk/curvature rolled out through the unicycle
model) and agent trajectories, each with a logit.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .diff import checkpoint
from .diff import tensor as ops
from .diff.tensor import Tensor, no_grad, parameter
from .errors import InvalidScene, MaskError
from .kinematics import J_MAX, K_MAX, rollout_tensor
from .nn import RELU_GAIN, DecoderLayer, EncoderLayer, LayerNorm, Linear, Module
from .prediction import AgentPredictionSet, Prediction, TrajectoryDistribution
from .scene import (DT, F_ACCEL, F_LENGTH, F_SPEED, F_TL, F_WIDTH, F_X, F_Y, N_FEATURES,
                    NetworkLimits, VectorScene, flatten_for_network, stack_flat, transform_to_sdv_frame)

# agent head outputs are in units of this many meters
AGENT_POSITION_SCALE = 10.0
# output heads start close to zero controls / offsets
HEAD_GAIN = 0.01


@dataclass
class ModelConfig:
    d_point: int = 32
    d_model: int = 64
    d_ffn: int = 128
    d_head_hidden: int = 64
    n_enc_layers: int = 3
    n_dec_layers: int = 3
    n_heads: int = 4
    num_sdv_modes: int = 10
    num_agent_modes: int = 5
    sdv_horizon: int = 45
    agent_horizon: int = 30
    a_max: int = 16
    e_max: int = 64
    p_max: int = 20
    j_max: float = J_MAX
    k_max: float = K_MAX
    logit_gain: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.num_sdv_modes < 1 or self.num_agent_modes < 1:
            raise ValueError("need at least one SDV and one agent mode")
        NetworkLimits(self.a_max, self.e_max, self.p_max)

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Widths of the large production-size network; the defaults are desk-size."""
        return cls(**{"d_point": 128, "d_model": 256, "d_ffn": 1024, "d_head_hidden": 512, **overrides})

    @property
    def limits(self) -> NetworkLimits:
        return NetworkLimits(self.a_max, self.e_max, self.p_max)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _feature_scale() -> np.ndarray:
    scale = np.ones(N_FEATURES)
    scale[[F_X, F_Y]] = 1.0 / 20.0
    scale[F_SPEED] = 1.0 / 10.0
    scale[F_ACCEL] = 1.0 / 3.0
    scale[[F_LENGTH, F_WIDTH]] = 1.0 / 5.0
    scale[F_TL] = 0.5
    return scale


FEATURE_SCALE = _feature_scale()


class PointEncoder(Module):
    """Pointwise 3-layer MLP, masked max-pool over points, projection to the model width."""

    def __init__(self, d_point: int, d_model: int, rng, n_layers: int = 3):
        self.layers = [Linear(N_FEATURES, d_point, rng, gain=RELU_GAIN)] + [
            Linear(d_point, d_point, rng, gain=RELU_GAIN) for _ in range(n_layers - 1)]
        self.proj = Linear(d_point, d_model, rng)

    def __call__(self, points: np.ndarray, point_mask: np.ndarray, element_mask: np.ndarray) -> Tensor:
        if np.any(element_mask & ~point_mask.any(axis=-1)):
            raise MaskError("an available element has no valid points")
        h = Tensor(points * FEATURE_SCALE)
        for layer in self.layers:
            h = ops.relu(layer(h))
        pooled = ops.masked_max_pool(h, point_mask, axis=2, fill_empty=0.0)
        out = self.proj(pooled)
        return ops.masked_fill(out, ~element_mask[..., None], 0.0)


@dataclass
class ModelOutput:
    sdv_controls: Tensor   # [B, N, T_s, 2] jerk, curvature after clamping
    sdv_states: Tensor     # [B, N, T_s, 5] x, y, theta, v, a
    sdv_logits: Tensor     # [B, N]
    agent_trajs: Tensor    # [B, A, M, T_a, 3] in the SDV frame
    agent_logits: Tensor   # [B, A, M]
    agent_mask: np.ndarray  # [B, A]


class MixturePlanner(Module):
    def __init__(self, config: ModelConfig = None):
        self.config = config = config or ModelConfig()
        rng = np.random.default_rng(config.seed)
        d = config.d_model
        self.agent_encoder = PointEncoder(config.d_point, d, rng)
        self.map_encoder = PointEncoder(config.d_point, d, rng)
        self.encoder = [EncoderLayer(d, config.d_ffn, config.n_heads, rng) for _ in range(config.n_enc_layers)]
        self.encoder_norm = LayerNorm(d)
        self.sdv_queries = parameter(rng.normal(size=(config.num_sdv_modes, d)))
        self.agent_queries = parameter(rng.normal(size=(config.num_agent_modes, d)))
        self.decoder = [DecoderLayer(d, config.d_ffn, config.n_heads, rng) for _ in range(config.n_dec_layers)]
        self.decoder_norm = LayerNorm(d)
        hidden = config.d_head_hidden
        self.sdv_hidden = Linear(d, hidden, rng, gain=RELU_GAIN)
        self.sdv_out = Linear(hidden, 2 * config.sdv_horizon + 1, rng, gain=HEAD_GAIN)
        self.agent_hidden = Linear(d, hidden, rng, gain=RELU_GAIN)
        self.agent_out = Linear(hidden, 3 * config.agent_horizon + 1, rng, gain=HEAD_GAIN)

    # ------------------------------------------------------------------
    def encode_points(self, batch: dict) -> Tensor:
        n_actor = 1 + self.config.a_max
        el, pm, em = batch["elements"], batch["point_mask"], batch["element_mask"]
        actors = self.agent_encoder(el[:, :n_actor], pm[:, :n_actor], em[:, :n_actor])
        static = self.map_encoder(el[:, n_actor:], pm[:, n_actor:], em[:, n_actor:])
        return ops.concat([actors, static], axis=1)

    def encode_context(self, features: Tensor, element_mask: np.ndarray) -> Tensor:
        if not np.all(element_mask.any(axis=1)):
            raise InvalidScene("all elements are masked")
        x = features
        for layer in self.encoder:
            x = layer(x, element_mask)
        return self.encoder_norm(x)

    def decode(self, context: Tensor, features: Tensor, element_mask: np.ndarray):
        cfg = self.config
        b, n, m, a = features.shape[0], cfg.num_sdv_modes, cfg.num_agent_modes, cfg.a_max
        d = cfg.d_model
        sdv_feat = features[:, 0:1, :]                       # [B, 1, d]
        agent_feat = features[:, 1:1 + a, :].reshape(b, a, 1, d)
        q_sdv = sdv_feat + self.sdv_queries                 # [B, N, d]
        q_agent = (agent_feat + self.agent_queries).reshape(b, a * m, d)
        queries = ops.concat([q_sdv, q_agent], axis=1)
        agent_mask = element_mask[:, 1:1 + a]
        q_mask = np.concatenate([np.ones((b, n), bool), np.repeat(agent_mask, m, axis=1)], axis=1)
        for layer in self.decoder:
            queries = layer(queries, q_mask, context, element_mask)
        queries = self.decoder_norm(queries)
        return queries[:, :n, :], queries[:, n:, :].reshape(b, a, m, d), agent_mask

    def forward(self, batch: dict) -> ModelOutput:
        cfg = self.config
        features = self.encode_points(batch)
        context = self.encode_context(features, batch["element_mask"])
        sdv_q, agent_q, agent_mask = self.decode(context, features, batch["element_mask"])
        b, n, t_s = sdv_q.shape[0], cfg.num_sdv_modes, cfg.sdv_horizon

        sdv_raw = self.sdv_out(ops.relu(self.sdv_hidden(sdv_q)))  # [B, N, 2T+1]
        raw = sdv_raw[..., :2 * t_s].reshape(b, n, t_s, 2)
        jerk = ops.scale(ops.tanh(raw[..., 0]), cfg.j_max)
        curv = ops.scale(ops.tanh(raw[..., 1]), cfg.k_max)
        initial = batch["sdv_state"][:, None, :]
        states = rollout_tensor(initial, jerk, curv, DT)
        sdv_logits = ops.scale(sdv_raw[..., 2 * t_s], cfg.logit_gain)
        controls = ops.stack([jerk, curv], axis=-1)

        a, m, t_a = cfg.a_max, cfg.num_agent_modes, cfg.agent_horizon
        agent_raw = self.agent_out(ops.relu(self.agent_hidden(agent_q)))  # [B, A, M, 3T+1]
        local = agent_raw[..., :3 * t_a].reshape(b, a, m, t_a, 3)
        pose = batch["agent_pose"]
        c = np.cos(pose[..., 2])[:, :, None, None]
        s = np.sin(pose[..., 2])[:, :, None, None]
        lx = ops.scale(local[..., 0], AGENT_POSITION_SCALE)
        ly = ops.scale(local[..., 1], AGENT_POSITION_SCALE)
        x = lx * c - ly * s + pose[..., 0][:, :, None, None]
        y = lx * s + ly * c + pose[..., 1][:, :, None, None]
        th = local[..., 2] + pose[..., 2][:, :, None, None]
        agent_trajs = ops.stack([x, y, th], axis=-1)
        agent_logits = ops.scale(agent_raw[..., 3 * t_a], cfg.logit_gain)
        return ModelOutput(controls, states, sdv_logits, agent_trajs, agent_logits, agent_mask)

    __call__ = forward

    # ------------------------------------------------------------------
    def prepare(self, scenes: Sequence[VectorScene]):
        ready = []
        for scene in scenes:
            pose = scene.sdv.pose
            if scene.frame_origin is None or (pose.x, pose.y, pose.theta) != (0.0, 0.0, 0.0):
                scene = transform_to_sdv_frame(scene)
            ready.append(scene)
        flats = [flatten_for_network(s, self.config.limits) for s in ready]
        return ready, flats

    def predict_batch(self, scenes: Sequence[VectorScene]) -> list:
        """Predict for several scenes at once; outputs are in each scene's SDV frame."""
        if not scenes:
            return []
        ready, flats = self.prepare(scenes)
        with no_grad():
            out = self.forward(stack_flat(flats))
        controls = out.sdv_controls.data
        trajs = np.concatenate([out.sdv_states.data, controls[..., 1:2], controls[..., 0:1]], axis=-1)
        results = []
        for i, (scene, flat) in enumerate(zip(ready, flats)):
            sdv = TrajectoryDistribution.from_logits(trajs[i], out.sdv_logits.data[i])
            slots = np.flatnonzero(flat.agent_index >= 0)
            ids = [scene.agents[flat.agent_index[s]].agent_id for s in slots]
            agents = AgentPredictionSet.from_logits(ids, out.agent_trajs.data[i, slots], out.agent_logits.data[i, slots])
            results.append(Prediction(sdv, agents))
        return results

    def predict(self, scene: VectorScene) -> Prediction:
        return self.predict_batch([scene])[0]


def card_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".card.json")


def save_model(model: MixturePlanner, path, extra: dict = None) -> None:
    checkpoint.save_params(path, model.state_dict())
    card = {"model_config": model.config.to_dict(), "num_parameters": model.num_parameters(),
            "checkpoint_format": checkpoint.FORMAT_NAME, "checkpoint_version": checkpoint.FORMAT_VERSION}
    if extra:
        card.update(extra)
    card_path(path).write_text(json.dumps(card, indent=2) + "\n")


def load_model(path) -> MixturePlanner:
    card = json.loads(card_path(path).read_text())
    model = MixturePlanner(ModelConfig.from_dict(card["model_config"]))
    model.load_state_dict(checkpoint.load_params(path))
    return model
