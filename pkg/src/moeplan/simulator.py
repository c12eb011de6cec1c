"""Closed-loop log-replay simulation and driving metrics.

Each tick the planner sees a scene built from the simulated SDV state and the
logged agents, a policy picks one predicted plan, and the SDV jumps to that
plan's first state. Agents replay their logs verbatim.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import PolicyError
from .geometry import (AGENT_CONTACT_MARGIN, STATIC_CONTACT_MARGIN, overlap_arrays, time_headway,
                       time_to_collision)
from .policy import PolicyConfig, PolicyKind, Selection, select
from .scene import DT, MOVING_SPEED, SDV_HISTORY_STEPS, Pose2D, to_local, to_parent
from .scenarios import Episode

METERS_PER_MILE = 1609.344
EVAL_STEPS = 30  # 3 s of predictions scored by minADE / minFDE


@dataclass(frozen=True)
class MetricConfig:
    agent_margin: float = AGENT_CONTACT_MARGIN
    static_margin: float = STATIC_CONTACT_MARGIN
    ttc_threshold: float = 1.5
    headway_threshold: float = 1.0
    brake_threshold: float = -3.0
    brake_ticks: int = 3
    speed_gap: float = 5.0
    debounce_ticks: int = 10


@dataclass
class EpisodeMetrics:
    estimated_contacts: int = 0
    close_calls: int = 0
    discomfort_brakes: int = 0
    passiveness_events: int = 0
    aggressiveness_events: int = 0
    miles_driven: float = 0.0
    ticks: int = 0
    episodes: int = 1
    aborted: int = 0
    sdv_ade_sum: float = 0.0
    sdv_fde_sum: float = 0.0
    sdv_count: int = 0
    agent_ade_sum: float = 0.0
    agent_fde_sum: float = 0.0
    agent_count: int = 0

    COUNTS = ("estimated_contacts", "close_calls", "discomfort_brakes", "passiveness_events", "aggressiveness_events")

    def __add__(self, other: "EpisodeMetrics") -> "EpisodeMetrics":
        return EpisodeMetrics(**{f.name: getattr(self, f.name) + getattr(other, f.name) for f in fields(self)})

    @classmethod
    def zero(cls) -> "EpisodeMetrics":
        return cls(episodes=0)

    @staticmethod
    def _ratio(a, b):
        return a / b if b else float("nan")

    @property
    def min_ade_3s_sdv(self):
        return self._ratio(self.sdv_ade_sum, self.sdv_count)

    @property
    def min_fde_3s_sdv(self):
        return self._ratio(self.sdv_fde_sum, self.sdv_count)

    @property
    def min_ade_3s_agent(self):
        return self._ratio(self.agent_ade_sum, self.agent_count)

    @property
    def min_fde_3s_agent(self):
        return self._ratio(self.agent_fde_sum, self.agent_count)

    def per_1k_miles(self, name: str) -> float:
        return self._ratio(getattr(self, name) * 1000.0, self.miles_driven)

    def to_dict(self) -> dict:
        out = asdict(self)
        out.update(min_ade_3s_sdv=self.min_ade_3s_sdv, min_fde_3s_sdv=self.min_fde_3s_sdv,
                   min_ade_3s_agent=self.min_ade_3s_agent, min_fde_3s_agent=self.min_fde_3s_agent)
        for name in self.COUNTS:
            out[f"{name}_per_1k_miles"] = self.per_1k_miles(name)
        return out


def aggregate(metrics: Sequence[EpisodeMetrics]) -> EpisodeMetrics:
    total = EpisodeMetrics.zero()
    for m in metrics:
        total = total + m
    return total


@dataclass
class SimTrace:
    episode_id: str
    policy: str
    records: list = field(default_factory=list)
    aborted: bool = False
    error: str = ""

    def executed_states(self) -> np.ndarray:
        return np.array([r["executed"] for r in self.records]).reshape(-1, 5)


@dataclass
class SimResult:
    metrics: EpisodeMetrics
    trace: SimTrace


# --------------------------------------------------------------------------
# geometry helpers

def route_progress(route_points: np.ndarray, xy) -> float:
    """Arc length of the projection of ``xy`` onto the route polyline."""
    pts = np.asarray(route_points, float)[:, :2]
    xy = np.asarray(xy, float)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    safe = np.where(seg_len > 0, seg_len, 1.0)
    u = np.clip(np.einsum("ij,ij->i", xy - pts[:-1], seg) / safe ** 2, 0.0, 1.0)
    proj = pts[:-1] + u[:, None] * seg
    d = np.hypot(*(proj - xy).T)
    i = int(np.argmin(d))
    return float(cum[i] + u[i] * seg_len[i])


def debounce(flags, gap: int) -> int:
    """Number of events when flagged ticks separated by fewer than ``gap`` clear ticks merge."""
    count, last = 0, None
    for i, flag in enumerate(flags):
        if flag:
            if last is None or i - last - 1 >= gap:
                count += 1
            last = i
    return count


def sustained_runs(flags, min_len: int) -> int:
    count, run = 0, 0
    for flag in list(flags) + [False]:
        if flag:
            run += 1
        else:
            count += run >= min_len
            run = 0
    return int(count)


def _agent_velocity(episode: Episode, k: int) -> np.ndarray:
    prev = max(k - 1, 0)
    if prev == k:
        return np.zeros((len(episode.agent_ids), 2))
    return (episode.agent_tracks[:, k, :2] - episode.agent_tracks[:, prev, :2]) / DT


def tick_events(episode: Episode, tick: int, state, cfg: MetricConfig = MetricConfig()) -> dict:
    """Per-tick event flags for the SDV at ``state`` against the log at simulated tick ``tick``."""
    k = episode.start_tick + tick
    state = np.asarray(state, float)
    half = 0.5 * np.asarray(episode.sdv_size, float)
    poses, halves, valid = episode.agent_box_arrays(k)
    contact = False
    if valid.any():
        contact = bool(np.any(overlap_arrays(state[:3], half, poses[valid], halves[valid], cfg.agent_margin)))
    statics = episode.static_obstacles()
    for el in statics:
        size = 0.5 * np.array([el.attributes["length"], el.attributes["width"]])
        contact |= bool(overlap_arrays(state[:3], half, el.points[0], size, cfg.static_margin))

    close = False
    v = max(float(state[3]), 0.0)
    sdv_kin = (state[0], state[1], state[2], v * math.cos(state[2]), v * math.sin(state[2]))
    vel = _agent_velocity(episode, k)
    others = []
    for i in np.flatnonzero(valid):
        p = poses[i]
        ttc = time_to_collision(sdv_kin, (p[0], p[1], p[2], vel[i, 0], vel[i, 1]), episode.sdv_size,
                                episode.agent_sizes[i], horizon=cfg.ttc_threshold)
        if ttc is not None and ttc < cfg.ttc_threshold:
            close = True
        others.append((Pose2D(*p), tuple(episode.agent_sizes[i])))
    for el in statics:
        others.append((Pose2D(*el.points[0]), (el.attributes["length"], el.attributes["width"])))
    if not close:
        hw = time_headway(Pose2D(*state[:3]), v, episode.sdv_size, others)
        close = hw is not None and hw < cfg.headway_threshold

    log = episode.sdv_log[k]
    s_sdv = route_progress(episode.route.points, state[:2])
    s_log = route_progress(episode.route.points, log[:2])
    return {
        "contact": contact,
        "close_call": bool(close),
        "hard_brake": bool(state[4] < cfg.brake_threshold),
        "passive": bool(log[3] - v >= cfg.speed_gap and s_sdv < s_log),
        "aggressive": bool(v - log[3] >= cfg.speed_gap and s_sdv > s_log),
    }


# --------------------------------------------------------------------------
# prediction scoring

def _min_errors(pred_xy: np.ndarray, gt_xy: np.ndarray, valid: np.ndarray):
    """min-over-modes ADE and FDE for ``pred_xy [M, T, 2]`` against ``gt_xy [T, 2]``."""
    if not valid.any():
        return None
    d = np.linalg.norm(pred_xy[:, valid] - gt_xy[valid], axis=-1)
    return float(d.mean(axis=1).min()), float(d[:, -1].min())


def score_prediction(prediction, scene, origin: Pose2D, steps: int = EVAL_STEPS) -> dict:
    """minADE/minFDE of SDV and agents against the scene's (world-frame) ground truth."""
    gt = scene.ground_truth
    out = {"sdv": None, "agents": []}
    if gt is None:
        return out
    sdv_pred = prediction.sdv.trajectories[:, :steps, :3]
    n = min(sdv_pred.shape[1], len(gt.sdv_future))
    gt_local = to_local(gt.sdv_future[:n, :3], origin)
    out["sdv"] = _min_errors(sdv_pred[:, :n, :2], gt_local[:, :2], np.ones(n, bool))
    index = {a.agent_id: i for i, a in enumerate(scene.agents)}
    for j, agent_id in enumerate(prediction.agents.agent_ids):
        i = index.get(agent_id)
        if i is None:
            continue
        pred = prediction.agents.trajectories[j, :, :steps]
        m = min(pred.shape[1], gt.agent_futures.shape[1])
        fut = to_local(gt.agent_futures[i, :m], origin)
        err = _min_errors(pred[:, :m, :2], fut[:, :2], gt.agent_valid[i, :m])
        if err is not None:
            out["agents"].append(err)
    return out


# --------------------------------------------------------------------------
# metrics

def compute_metrics(trace: SimTrace, episode: Episode, cfg: MetricConfig = MetricConfig()) -> EpisodeMetrics:
    """Recompute every metric from the executed states in ``trace``."""
    m = EpisodeMetrics(aborted=int(trace.aborted))
    flags = {"contact": [], "close_call": [], "hard_brake": [], "passive": [], "aggressive": []}
    for rec in trace.records:
        state = np.asarray(rec["executed"], float)
        ev = tick_events(episode, rec["tick"] + 1, state, cfg=cfg)
        for name in flags:
            flags[name].append(ev[name])
        start = np.asarray(rec["sdv_state"], float)
        m.miles_driven += math.hypot(state[0] - start[0], state[1] - start[1]) / METERS_PER_MILE
        score = rec.get("scores") or {}
        if score.get("sdv") is not None:
            m.sdv_ade_sum += score["sdv"][0]
            m.sdv_fde_sum += score["sdv"][1]
            m.sdv_count += 1
        for ade, fde in score.get("agents", []):
            m.agent_ade_sum += ade
            m.agent_fde_sum += fde
            m.agent_count += 1
    m.ticks = len(trace.records)
    m.estimated_contacts = debounce(flags["contact"], cfg.debounce_ticks)
    m.close_calls = debounce(flags["close_call"], cfg.debounce_ticks)
    m.discomfort_brakes = sustained_runs(flags["hard_brake"], cfg.brake_ticks)
    m.passiveness_events = debounce(flags["passive"], cfg.debounce_ticks)
    m.aggressiveness_events = debounce(flags["aggressive"], cfg.debounce_ticks)
    return m


# --------------------------------------------------------------------------
# closed loop

def _predict_many(model, scenes):
    if hasattr(model, "predict_batch"):
        return model.predict_batch(scenes)
    return [model.predict(s) for s in scenes]


def _num_modes(model) -> Optional[int]:
    cfg = getattr(model, "config", None)
    return getattr(cfg, "num_sdv_modes", None)


class _Run:
    def __init__(self, episode: Episode, policy_name: str, max_ticks: Optional[int]):
        self.episode = episode
        self.state = np.array(episode.sdv_log[episode.start_tick], float)
        k = episode.start_tick
        self.history = list(episode.sdv_log[k - SDV_HISTORY_STEPS + 1:k + 1, 3] > MOVING_SPEED)
        self.trace = SimTrace(episode.episode_id, policy_name)
        self.ticks = episode.num_ticks if max_ticks is None else min(max_ticks, episode.num_ticks)
        self.tick = 0

    @property
    def active(self) -> bool:
        return not self.trace.aborted and self.tick < self.ticks

    def scene(self):
        return self.episode.scene_at(self.tick, self.state, self.history)

    def abort(self, exc: Exception):
        self.trace.aborted = True
        self.trace.error = f"{type(exc).__name__}: {exc}"


def execute_first_step(state, plan: np.ndarray) -> np.ndarray:
    """World-frame SDV state after moving to the first state of a local-frame plan."""
    origin = Pose2D(*np.asarray(state, float)[:3])
    first = np.asarray(plan, float)[0]
    pose = to_parent(first[None, :3], origin)[0]
    return np.array([pose[0], pose[1], pose[2], first[3], first[4]])


def _step(run: _Run, scene, prediction, chooser, cfg: MetricConfig, score: bool):
    origin = Pose2D(*run.state[:3])
    by_id = {a.agent_id: a.size for a in scene.agents}
    sizes = [by_id[i] for i in prediction.agents.agent_ids]
    sel: Selection = chooser(prediction, run.episode.sdv_size, sizes)
    plan = prediction.sdv.trajectories[sel.index]
    new_state = execute_first_step(run.state, plan)
    if not np.all(np.isfinite(new_state)):
        raise FloatingPointError("planner produced a non-finite state")
    k_next = run.episode.start_tick + run.tick + 1
    valid = run.episode.agent_valid[:, k_next]
    record = {
        "tick": run.tick,
        "time": round(k_next * DT, 10),
        "sdv_state": run.state.tolist(),
        "executed": new_state.tolist(),
        "plan_first_step": plan[0].tolist(),
        "selected": sel.index,
        "costs": np.asarray(sel.costs).tolist(),
        "tbar": None if sel.tbar is None else np.asarray(sel.tbar).tolist(),
        "agent_poses": {run.episode.agent_ids[i]: run.episode.agent_tracks[i, k_next].tolist()
                        for i in np.flatnonzero(valid)},
        "events": tick_events(run.episode, run.tick + 1, new_state, cfg=cfg),
        "scores": score_prediction(prediction, scene, origin) if score else None,
    }
    run.trace.records.append(record)
    run.history = run.history[1:] + [bool(new_state[3] > MOVING_SPEED)]
    run.state = new_state
    run.tick += 1


def _policy_chooser(config: PolicyConfig):
    def choose(prediction, sdv_size, agent_sizes):
        return select(prediction.sdv, prediction.agents, sdv_size, agent_sizes, config)
    return choose


def _expert_chooser(k: int):
    def choose(prediction, sdv_size, agent_sizes):
        n = prediction.sdv.num_modes
        if not 0 <= k < n:
            raise PolicyError(f"expert index {k} outside [0, {n})")
        return Selection(k, -np.asarray(prediction.sdv.probabilities), None)
    return choose


def run_episodes(episodes: Sequence[Episode], model, policy: PolicyConfig = PolicyConfig(),
                 chooser: Callable = None, max_ticks: Optional[int] = None, batch_size: int = 64,
                 metric_config: MetricConfig = MetricConfig(), score: bool = True, policy_name: str = None) -> list:
    """Simulate several episodes in lockstep, batching the planner calls across them."""
    chooser = chooser or _policy_chooser(policy)
    name = policy_name or policy.policy.value
    runs = [_Run(ep, name, max_ticks) for ep in episodes]
    while True:
        active = [r for r in runs if r.active]
        if not active:
            break
        for start in range(0, len(active), batch_size):
            group = active[start:start + batch_size]
            scenes = [r.scene() for r in group]
            try:
                predictions = _predict_many(model, scenes)
            except PolicyError:
                raise
            except Exception:
                predictions = []
                for r, s in zip(group, scenes):
                    try:
                        predictions.append(_predict_many(model, [s])[0])
                    except Exception as exc:  # a broken planner aborts only its own episode
                        r.abort(exc)
                        predictions.append(None)
            for r, scene, pred in zip(group, scenes, predictions):
                if pred is None:
                    continue
                try:
                    _step(r, scene, pred, chooser, metric_config, score)
                except PolicyError:
                    raise
                except Exception as exc:
                    r.abort(exc)
    return [SimResult(compute_metrics(r.trace, r.episode, metric_config), r.trace) for r in runs]


def run_closed_loop(episode: Episode, model, policy: PolicyConfig = PolicyConfig(), **kwargs) -> SimResult:
    return run_episodes([episode], model, policy, **kwargs)[0]


def fixed_expert_rollout(episode: Episode, model, k: int, **kwargs) -> EpisodeMetrics:
    """Closed loop that always executes expert ``k``, ignoring probabilities and collisions."""
    n = _num_modes(model)
    if n is not None and not 0 <= k < n:
        raise PolicyError(f"expert index {k} outside [0, {n})")
    if k < 0:
        raise PolicyError(f"expert index {k} is negative")
    return run_episodes([episode], model, chooser=_expert_chooser(k), policy_name=f"expert{k}", **kwargs)[0].metrics


def fixed_expert_episodes(episodes: Sequence[Episode], model, k: int, **kwargs) -> list:
    n = _num_modes(model)
    if k < 0 or (n is not None and k >= n):
        raise PolicyError(f"expert index {k} outside [0, {n})")
    return run_episodes(episodes, model, chooser=_expert_chooser(k), policy_name=f"expert{k}", **kwargs)


# --------------------------------------------------------------------------
# trace files

def write_traces(path, traces: Sequence[SimTrace]) -> None:
    with open(path, "w") as fh:
        for tr in traces:
            for rec in tr.records:
                fh.write(json.dumps({"kind": "tick", "episode_id": tr.episode_id, **rec}) + "\n")
            fh.write(json.dumps({"kind": "summary", "episode_id": tr.episode_id, "policy": tr.policy,
                                 "ticks": len(tr.records), "aborted": tr.aborted, "error": tr.error}) + "\n")


def load_traces(path) -> list:
    traces, current = [], {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            eid = rec.pop("episode_id")
            kind = rec.pop("kind")
            tr = current.setdefault(eid, SimTrace(eid, ""))
            if kind == "tick":
                tr.records.append(rec)
            else:
                tr.policy, tr.aborted, tr.error = rec["policy"], rec["aborted"], rec["error"]
                traces.append(current.pop(eid))
    traces.extend(current.values())
    return traces


def summary_report(metrics: EpisodeMetrics, title: str = "simulation") -> str:
    lines = [f"# {title}", f"episodes: {metrics.episodes}", f"aborted: {metrics.aborted}",
             f"ticks: {metrics.ticks}", f"miles_driven: {metrics.miles_driven:.4f}"]
    for name in EpisodeMetrics.COUNTS:
        lines.append(f"{name}: {getattr(metrics, name)} ({metrics.per_1k_miles(name):.2f} per 1k miles)")
    for name in ("min_ade_3s_sdv", "min_fde_3s_sdv", "min_ade_3s_agent", "min_fde_3s_agent"):
        lines.append(f"{name}: {getattr(metrics, name):.4f}")
    return "\n".join(lines) + "\n"


__all__ = ["EpisodeMetrics", "SimTrace", "SimResult", "MetricConfig", "run_closed_loop", "run_episodes",
           "compute_metrics", "fixed_expert_rollout", "write_traces", "load_traces", "PolicyKind"]
