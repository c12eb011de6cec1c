"""Synthetic log episodes standing in for recorded driving data.

Every episode is a fixed log: the SDV track is produced by an IDM-style
longitudinal controller pushed through the unicycle model (so it is
kinematically exact), agents follow scripted tracks. Scenes for any tick are
cut out of the log on demand.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParseError
from .geometry import overlap_arrays
from .kinematics import rollout_states
from .scene import (AGENT_HISTORY_STEPS, DT, MOVING_SPEED, SDV_HISTORY_STEPS, AgentSnapshot, AgentType,
                    ElementType, GroundTruth, PolylineElement, Pose2D, SdvSnapshot, VectorScene, to_parent,
                    wrap_angle)

SDV_SIZE = (4.5, 1.9)
LANE_WIDTH = 3.5
PERCEPTION_RANGE = 80.0
SDV_HORIZON = 45
AGENT_HORIZON = 30
MIN_DURATION, MAX_DURATION = 10.0, 30.0


class ScenarioKind(enum.Enum):
    STRAIGHT_ROAD = "StraightRoad"
    INTERSECTION = "Intersection"
    LEAD_VEHICLE = "LeadVehicle"
    CUT_IN = "CutIn"
    TURN_BIMODAL = "TurnBimodal"

    @classmethod
    def parse(cls, value) -> "ScenarioKind":
        if isinstance(value, cls):
            return value
        for kind in cls:
            if value in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown scenario kind {value!r}; choose from {[k.value for k in cls]}")


@dataclass(frozen=True)
class Episode:
    """A logged drive. Arrays span history, the simulated ticks and the final planning horizon."""

    episode_id: str
    kind: str
    map_elements: tuple
    route: PolylineElement
    sdv_log: np.ndarray          # [T_total, 5] x, y, theta, v, a
    sdv_size: tuple
    agent_ids: tuple
    agent_tracks: np.ndarray     # [A, T_total, 3]
    agent_valid: np.ndarray      # [A, T_total]
    agent_sizes: np.ndarray      # [A, 2]
    agent_types: tuple
    start_tick: int = SDV_HISTORY_STEPS
    num_ticks: int = 100
    meta: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return self.num_ticks * DT

    @property
    def timestamps(self) -> np.ndarray:
        return (self.start_tick + np.arange(self.num_ticks)) * DT

    def agent_box_arrays(self, k: int):
        """Poses ``[A, 3]``, half sizes ``[A, 2]`` and validity of agents at absolute tick ``k``."""
        return self.agent_tracks[:, k], 0.5 * self.agent_sizes, self.agent_valid[:, k]

    def static_obstacles(self) -> list:
        return [e for e in self.map_elements if e.element_type == ElementType.STATIC_OBSTACLE]

    def scene_at(self, tick: int, sdv_state=None, moving_history=None) -> VectorScene:
        """World-frame scene at simulated tick ``tick`` (0-based from ``start_tick``).

        ``sdv_state`` (x, y, theta, v, a) and ``moving_history`` replace the
        logged SDV when the simulated vehicle has diverged from the log.
        Ground truth always comes from the log.
        """
        k = self.start_tick + tick
        state = self.sdv_log[k] if sdv_state is None else np.asarray(sdv_state, float)
        if moving_history is None:
            moving_history = self.sdv_log[k - SDV_HISTORY_STEPS + 1:k + 1, 3] > MOVING_SPEED
        sdv = SdvSnapshot(Pose2D(*state[:3]), max(0.0, float(state[3])), state[4], self.sdv_size,
                          tuple(bool(v) for v in moving_history))
        agents, futures, valid = [], [], []
        h = AGENT_HISTORY_STEPS
        for i, agent_id in enumerate(self.agent_ids):
            if not self.agent_valid[i, k]:
                continue
            if math.hypot(*(self.agent_tracks[i, k, :2] - state[:2])) > PERCEPTION_RANGE:
                continue
            hist = self.agent_tracks[i, k - h + 1:k + 1].copy()
            hist_valid = self.agent_valid[i, k - h + 1:k + 1]
            if not hist_valid.all():
                first = int(np.argmax(hist_valid))
                hist[:first] = hist[first]
            agents.append(AgentSnapshot(agent_id, hist, tuple(self.agent_sizes[i]), self.agent_types[i]))
            futures.append(self.agent_tracks[i, k + 1:k + 1 + AGENT_HORIZON])
            valid.append(self.agent_valid[i, k + 1:k + 1 + AGENT_HORIZON])
        gt = GroundTruth(self.sdv_log[k + 1:k + 1 + SDV_HORIZON],
                         np.array(futures).reshape(len(agents), AGENT_HORIZON, 3),
                         np.array(valid, bool).reshape(len(agents), AGENT_HORIZON))
        return VectorScene(sdv=sdv, agents=tuple(agents), map_elements=self.map_elements, route=self.route,
                           timestamp=k * DT, ground_truth=gt)

    @property
    def frames(self) -> list:
        return [self.scene_at(t) for t in range(self.num_ticks)]


# --------------------------------------------------------------------------
# serialization

def _el_to(e: PolylineElement) -> dict:
    return {"type": e.element_type.name, "points": e.points.tolist(), "source_id": e.source_id,
            "attributes": dict(e.attributes)}


def _el_from(d) -> PolylineElement:
    return PolylineElement(ElementType[d["type"]], np.array(d["points"], float), d["source_id"], d["attributes"])


def episode_to_dict(ep: Episode) -> dict:
    return {
        "episode_id": ep.episode_id, "kind": ep.kind, "dt": DT,
        "start_tick": ep.start_tick, "num_ticks": ep.num_ticks,
        "map_elements": [_el_to(e) for e in ep.map_elements], "route": _el_to(ep.route),
        "sdv_log": ep.sdv_log.tolist(), "sdv_size": list(ep.sdv_size),
        "agent_ids": list(ep.agent_ids), "agent_tracks": ep.agent_tracks.tolist(),
        "agent_valid": ep.agent_valid.astype(int).tolist(), "agent_sizes": ep.agent_sizes.tolist(),
        "agent_types": [AgentType(t).name for t in ep.agent_types], "meta": ep.meta,
    }


def episode_from_dict(d: dict) -> Episode:
    n_agents = len(d["agent_ids"])
    n_total = len(d["sdv_log"])
    return Episode(
        episode_id=d["episode_id"], kind=d["kind"],
        map_elements=tuple(_el_from(e) for e in d["map_elements"]), route=_el_from(d["route"]),
        sdv_log=np.array(d["sdv_log"], float).reshape(n_total, 5), sdv_size=tuple(d["sdv_size"]),
        agent_ids=tuple(d["agent_ids"]),
        agent_tracks=np.array(d["agent_tracks"], float).reshape(n_agents, n_total, 3),
        agent_valid=np.array(d["agent_valid"], bool).reshape(n_agents, n_total),
        agent_sizes=np.array(d["agent_sizes"], float).reshape(n_agents, 2),
        agent_types=tuple(AgentType[t] for t in d["agent_types"]),
        start_tick=d["start_tick"], num_ticks=d["num_ticks"], meta=d.get("meta", {}),
    )


def write_episodes(path, episodes) -> None:
    with open(path, "w") as fh:
        for ep in episodes:
            fh.write(json.dumps(episode_to_dict(ep)) + "\n")


def load_episodes(path) -> list:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(episode_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(f"{type(exc).__name__}: {exc}", lineno) from exc
    return out


# --------------------------------------------------------------------------
# scripted motion

def idm_acceleration(v: float, v_desired: float, gap: Optional[float], closing: float,
                     a_max: float = 2.0, comfort_decel: float = 3.0, min_gap: float = 3.0,
                     headway: float = 1.3) -> float:
    free = 1.0 - (v / max(v_desired, 0.1)) ** 4
    if gap is None:
        return a_max * free
    s_star = min_gap + max(0.0, v * headway + v * closing / (2.0 * math.sqrt(a_max * comfort_decel)))
    return a_max * (free - (s_star / max(gap, 0.1)) ** 2)


def drive_longitudinal(n_steps: int, v0: float, v_desired: float, leads, jerk_gain: float = 4.0,
                       jerk_limit: float = 12.0, decel_limit: float = 8.0) -> np.ndarray:
    """Roll a straight-line SDV along +x from the origin.

    ``leads(k, x)`` returns ``(gap_rear_x, lead_speed)`` pairs for obstacles
    ahead at tick ``k`` given the SDV front-bumper coordinate ``x``. Returns
    ``[n_steps, 5]`` states; row 0 is the initial state.
    """
    states = np.zeros((n_steps, 5))
    states[0] = [0.0, 0.0, 0.0, v0, 0.0]
    half = 0.5 * SDV_SIZE[0]
    for k in range(1, n_steps):
        x, _, _, v, a = states[k - 1]
        best_gap, best_speed = None, 0.0
        for rear_x, speed in leads(k - 1, x + half):
            gap = rear_x - (x + half)
            if gap > -0.5 and (best_gap is None or gap < best_gap):
                best_gap, best_speed = gap, speed
        a_des = idm_acceleration(v, v_desired, best_gap, v - best_speed)
        a_des = max(a_des, -decel_limit)
        jerk = float(np.clip(jerk_gain * (a_des - a), -jerk_limit, jerk_limit))
        nxt, _ = rollout_states(states[k - 1], np.array([jerk]), np.array([0.0]), DT)
        states[k] = nxt[0]
    return states


def integrate_speed(x0: float, speeds: np.ndarray) -> np.ndarray:
    """Positions from a speed profile with the same post-update Euler rule as the SDV."""
    return x0 + np.cumsum(speeds) * DT - speeds[0] * DT


def braking_profile(n: int, v0: float, brake_tick: int, decel: float, resume_tick: Optional[int] = None,
                    resume_accel: float = 1.5, v_resume: float = 0.0) -> np.ndarray:
    v = np.empty(n)
    v[0] = v0
    for k in range(1, n):
        if resume_tick is not None and k >= resume_tick:
            v[k] = min(v_resume, v[k - 1] + resume_accel * DT)
        elif k >= brake_tick:
            v[k] = max(0.0, v[k - 1] - decel * DT)
        else:
            v[k] = v[k - 1]
    return v


def _line(x0, y0, x1, y1, spacing=5.0) -> np.ndarray:
    length = math.hypot(x1 - x0, y1 - y0)
    n = max(2, int(round(length / spacing)) + 1)
    t = np.linspace(0.0, 1.0, n)
    theta = math.atan2(y1 - y0, x1 - x0)
    return np.stack([x0 + t * (x1 - x0), y0 + t * (y1 - y0), np.full(n, theta)], -1)


def _straight_map(x_min=-60.0, x_max=260.0, lanes=(0.0, LANE_WIDTH)) -> list:
    els = []
    for i, y in enumerate(lanes):
        els.append(PolylineElement(ElementType.LANE_CENTER, _line(x_min, y, x_max, y), f"lane{i}"))
    edges = sorted({y - LANE_WIDTH / 2 for y in lanes} | {y + LANE_WIDTH / 2 for y in lanes})
    for i, y in enumerate(edges):
        els.append(PolylineElement(ElementType.LANE_BOUNDARY, _line(x_min, y, x_max, y), f"edge{i}"))
    return els


def _cross_map(x_int: float, y_min=-80.0, y_max=80.0) -> list:
    els = []
    for i, x in enumerate((x_int - LANE_WIDTH / 2, x_int + LANE_WIDTH / 2)):
        direction = (y_max, y_min) if i == 0 else (y_min, y_max)
        els.append(PolylineElement(ElementType.LANE_CENTER, _line(x, direction[0], x, direction[1]), f"cross{i}"))
    w = LANE_WIDTH
    corners = np.array([[x_int - w, -w, 0], [x_int + w, -w, 0], [x_int + w, 2 * w, 0], [x_int - w, 2 * w, 0]], float)
    els.append(PolylineElement(ElementType.INTERSECTION, corners, "junction"))
    stop_x = x_int - w - 1.0
    els.append(PolylineElement(ElementType.CROSSWALK, _line(stop_x, -w / 2, stop_x, w / 2, 1.0), "crosswalk"))
    return els


def _route(x_min=-60.0, x_max=260.0) -> PolylineElement:
    return PolylineElement(ElementType.ROUTE_GOAL, _line(x_min, 0.0, x_max, 0.0), "route")


def _constant_track(n, x0, y0, vx, vy=0.0) -> np.ndarray:
    t = np.arange(n) * DT
    theta = math.atan2(vy, vx) if (vx or vy) else 0.0
    return np.stack([x0 + vx * t, y0 + vy * t, np.full(n, theta)], -1)


def _vehicle_size(rng) -> tuple:
    return (float(rng.uniform(4.0, 5.0)), float(rng.uniform(1.8, 2.0)))


class _Builder:
    """Accumulates agents for one episode in the canonical road frame."""

    def __init__(self, n_total: int):
        self.n_total = n_total
        self.ids, self.tracks, self.valid, self.sizes, self.types = [], [], [], [], []

    def add(self, track, size, agent_type=AgentType.VEHICLE, valid=None):
        self.ids.append(f"agent{len(self.ids)}")
        self.tracks.append(np.asarray(track, float))
        self.valid.append(np.ones(self.n_total, bool) if valid is None else np.asarray(valid, bool))
        self.sizes.append(size)
        self.types.append(agent_type)

    def arrays(self):
        n = len(self.ids)
        tracks = np.array(self.tracks).reshape(n, self.n_total, 3)
        return (tuple(self.ids), tracks, np.array(self.valid, bool).reshape(n, self.n_total),
                np.array(self.sizes, float).reshape(n, 2), tuple(self.types))


def _lead_from_track(track, size):
    half = 0.5 * size[0]
    speeds = np.concatenate([[0.0], np.hypot(np.diff(track[:, 0]), np.diff(track[:, 1])) / DT])
    speeds[0] = speeds[1] if len(speeds) > 1 else 0.0
    return track, half, speeds


def _in_lane_leads(lead_specs, lane_halfwidth=LANE_WIDTH / 2 + 0.3):
    """``leads`` callback for :func:`drive_longitudinal` from agent tracks in the SDV lane."""
    prepared = [_lead_from_track(t, s) + (s,) for t, s in lead_specs]

    def leads(k, _front_x):
        out = []
        for track, half, speeds, size in prepared:
            if abs(track[k, 1]) - 0.5 * size[1] < lane_halfwidth - 0.3 + 0.05:
                out.append((track[k, 0] - half, speeds[k]))
        return out

    return leads


def _log_is_clean(sdv_log, builder: _Builder, static=()) -> bool:
    _, tracks, valid, sizes, _ = builder.arrays()
    half_sdv = 0.5 * np.asarray(SDV_SIZE)
    if len(tracks):
        hits = overlap_arrays(sdv_log[None, :, :3], half_sdv, tracks, 0.5 * sizes[:, None, :], 0.3)
        if np.any(hits & valid):
            return False
    for el in static:
        pose = el.points[0]
        size = np.array([el.attributes["length"], el.attributes["width"]])
        if np.any(overlap_arrays(sdv_log[:, :3], half_sdv, pose, 0.5 * size, 0.3)):
            return False
    return True


# --------------------------------------------------------------------------
# scenario kinds

def _straight_road(rng, n_total):
    v = float(rng.uniform(5.0, 15.0))
    t = np.arange(n_total) * DT
    # zero controls: exact constant-velocity unicycle rollout
    states, _ = rollout_states(np.array([0.0, 0.0, 0.0, v, 0.0]), np.zeros(n_total - 1), np.zeros(n_total - 1), DT)
    sdv = np.concatenate([[[0.0, 0.0, 0.0, v, 0.0]], states])
    b = _Builder(n_total)
    for _ in range(int(rng.integers(0, 4))):
        b.add(_constant_track(n_total, float(rng.uniform(-30, 60)), LANE_WIDTH, float(rng.uniform(4, 16))),
              _vehicle_size(rng))
    static = []
    if rng.random() < 0.5:
        static.append(PolylineElement(ElementType.STATIC_OBSTACLE, [[float(rng.uniform(10, 120)), -3.4, 0.0]],
                                      "parked0", {"length": 4.5, "width": 1.9}))
    del t
    return sdv, b, _straight_map() + static, {}


def _lead_vehicle(rng, n_total, adversarial=False):
    v_sdv = float(rng.uniform(6.0, 14.0))
    v_lead = float(np.clip(v_sdv + rng.uniform(-3.0, 2.0), 3.0, 15.0))
    gap0 = float(rng.uniform(12.0, 30.0) if not adversarial else rng.uniform(10.0, 22.0))
    size = _vehicle_size(rng)
    x0 = 0.5 * SDV_SIZE[0] + gap0 + 0.5 * size[0]
    brakes = adversarial or rng.random() < 0.7
    if brakes:
        brake_tick = int(rng.integers(SDV_HISTORY_STEPS + 5, n_total - 60))
        decel = float(rng.uniform(4.0, 7.0) if adversarial else rng.uniform(2.0, 6.0))
        resume = brake_tick + int(rng.integers(25, 50)) if rng.random() < 0.4 else None
        speeds = braking_profile(n_total, v_lead, brake_tick, decel, resume, v_resume=v_lead)
    else:
        speeds = np.full(n_total, v_lead)
    xs = integrate_speed(x0, speeds)
    lead = np.stack([xs, np.zeros(n_total), np.zeros(n_total)], -1)
    b = _Builder(n_total)
    b.add(lead, size)
    for _ in range(int(rng.integers(0, 3))):
        b.add(_constant_track(n_total, float(rng.uniform(-30, 60)), LANE_WIDTH, float(rng.uniform(4, 16))),
              _vehicle_size(rng))
    sdv = drive_longitudinal(n_total, v_sdv, float(rng.uniform(10.0, 15.0)), _in_lane_leads([(lead, size)]))
    return sdv, b, _straight_map(), {"lead_speeds": speeds.tolist(), "lead_x0": x0}


def _cut_in(rng, n_total, adversarial=False):
    v_sdv = float(rng.uniform(8.0, 14.0))
    v_cut = float(max(3.0, v_sdv - rng.uniform(1.0, 5.0 if adversarial else 3.0)))
    size = _vehicle_size(rng)
    dx0 = float(rng.uniform(6.0, 14.0) if adversarial else rng.uniform(10.0, 25.0))
    start = int(rng.integers(SDV_HISTORY_STEPS + 5, SDV_HISTORY_STEPS + 50))
    dur = int(rng.integers(15, 30))
    t = np.arange(n_total)
    x = 0.5 * SDV_SIZE[0] + dx0 + 0.5 * size[0] + v_cut * t * DT
    frac = np.clip((t - start) / dur, 0.0, 1.0)
    y = LANE_WIDTH * 0.5 * (1.0 + np.cos(np.pi * frac))
    dy = np.gradient(y) / DT
    theta = np.arctan2(dy, np.full(n_total, v_cut))
    cutter = np.stack([x, y, theta], -1)
    b = _Builder(n_total)
    b.add(cutter, size)
    sdv = drive_longitudinal(n_total, v_sdv, float(rng.uniform(v_sdv, 15.0)), _in_lane_leads([(cutter, size)]))
    return sdv, b, _straight_map(), {"cut_start": start}


def _intersection(rng, n_total, adversarial=False):
    v_sdv = float(rng.uniform(7.0, 12.0))
    x_int = float(rng.uniform(40.0, 70.0))
    b = _Builder(n_total)
    size = _vehicle_size(rng)
    v_cross = float(rng.uniform(6.0, 12.0))
    # time the crossing agent reaches the SDV lane, relative to the SDV's free arrival
    t_sdv = (SDV_HISTORY_STEPS * DT) + x_int / v_sdv
    offset = float(rng.uniform(-1.5, 1.5) if adversarial else rng.uniform(-4.0, 4.0))
    t_cross = t_sdv + offset
    x_lane = x_int + LANE_WIDTH / 2
    y0 = -v_cross * t_cross
    track = _constant_track(n_total, x_lane, y0, 0.0, v_cross)
    b.add(track, size)
    # SDV yields with a virtual stop line until the crosser has cleared its lane
    stop_x = x_int - LANE_WIDTH - 1.0
    clear_tick = int(math.ceil((t_cross + (LANE_WIDTH + size[0]) / v_cross) / DT))
    yield_ = offset > -1.0

    def leads(k, front_x):
        out = []
        if yield_ and k < clear_tick and front_x <= stop_x + 0.5:
            out.append((stop_x, 0.0))
        y_k = track[k, 1]
        if abs(y_k) < LANE_WIDTH and track[k, 0] - 0.5 * size[1] > front_x - 1.0:
            out.append((track[k, 0] - 0.5 * size[1], 0.0))
        return out

    sdv = drive_longitudinal(n_total, v_sdv, float(rng.uniform(v_sdv, 14.0)), leads)
    if rng.random() < 0.5:
        other = _constant_track(n_total, float(rng.uniform(-20, 40)), LANE_WIDTH, float(rng.uniform(6, 14)))
        b.add(other, _vehicle_size(rng))
    return sdv, b, _straight_map() + _cross_map(x_int), {"x_int": x_int, "yields": yield_}


def _turn_bimodal(rng, n_total):
    v_sdv = float(rng.uniform(2.0, 5.0))
    states, _ = rollout_states(np.array([0.0, 0.0, 0.0, v_sdv, 0.0]), np.zeros(n_total - 1), np.zeros(n_total - 1), DT)
    sdv = np.concatenate([[[0.0, 0.0, 0.0, v_sdv, 0.0]], states])
    x_int = float(rng.uniform(60.0, 80.0))
    x_lane = x_int + LANE_WIDTH / 2
    v = float(rng.uniform(6.0, 9.0))
    radius = 8.0
    turn_left = bool(rng.random() < 0.5)
    # the agent enters the turn at y = -radius shortly after the simulated ticks begin
    enter_tick = SDV_HISTORY_STEPS + int(rng.integers(5, 25))
    track = np.zeros((n_total, 3))
    # left turners cross both eastbound lanes before turning into the westbound lane
    extra = 2.0 * LANE_WIDTH if turn_left else 0.0
    s = (np.arange(n_total) - enter_tick) * v * DT - extra  # arc length past the turn entry
    for k in range(n_total):
        if s[k] <= 0:
            track[k] = [x_lane, -radius + extra + s[k], math.pi / 2]
            continue
        phi = min(s[k] / radius, math.pi / 2)
        rest = s[k] - phi * radius
        if turn_left:
            cx, cy = x_lane - radius, -radius + extra
            px, py = cx + radius * math.cos(phi), cy + radius * math.sin(phi)
            heading = math.pi / 2 + phi
            px, py = px - rest, py
        else:
            cx, cy = x_lane + radius, -radius
            px, py = cx - radius * math.cos(phi), cy + radius * math.sin(phi)
            heading = math.pi / 2 - phi
            px, py = px + rest, py
        track[k] = [px, py, heading]
    b = _Builder(n_total)
    b.add(track, _vehicle_size(rng))
    westbound = PolylineElement(ElementType.LANE_CENTER, _line(260.0, 2 * LANE_WIDTH, -60.0, 2 * LANE_WIDTH), "lane_west")
    elements = _straight_map() + [westbound] + _cross_map(x_int)
    return sdv, b, elements, {"turn_left": turn_left, "enter_tick": enter_tick}


_GENERATORS = {
    ScenarioKind.STRAIGHT_ROAD: _straight_road,
    ScenarioKind.LEAD_VEHICLE: _lead_vehicle,
    ScenarioKind.CUT_IN: _cut_in,
    ScenarioKind.INTERSECTION: _intersection,
    ScenarioKind.TURN_BIMODAL: _turn_bimodal,
}


def _place(elements, route, sdv_log, tracks, origin: Pose2D):
    def move(poses):
        return to_parent(poses, origin)

    els = tuple(PolylineElement(e.element_type, move(e.points), e.source_id, e.attributes) for e in elements)
    route = PolylineElement(route.element_type, move(route.points), route.source_id, route.attributes)
    sdv = np.array(sdv_log)
    sdv[:, :3] = move(sdv_log[:, :3])
    # keep the logged heading continuous
    sdv[:, 2] = sdv_log[:, 2] + origin.theta
    tracks = move(tracks) if tracks.size else tracks
    return els, route, sdv, tracks


def generate_episode(kind, rng: np.random.Generator, episode_id: str = "ep0", duration: float = 10.0,
                     adversarial: bool = False, world_placement: bool = True) -> Episode:
    kind = ScenarioKind.parse(kind)
    num_ticks = int(round(duration / DT))
    n_total = SDV_HISTORY_STEPS + num_ticks + SDV_HORIZON
    gen = _GENERATORS[kind]
    for _ in range(100):
        if kind in (ScenarioKind.LEAD_VEHICLE, ScenarioKind.CUT_IN, ScenarioKind.INTERSECTION):
            sdv, builder, elements, meta = gen(rng, n_total, adversarial)
        else:
            sdv, builder, elements, meta = gen(rng, n_total)
        static = [e for e in elements if e.element_type == ElementType.STATIC_OBSTACLE]
        if _log_is_clean(sdv, builder, static):
            break
    else:  # pragma: no cover - generators are tuned to succeed quickly
        raise RuntimeError(f"could not generate a collision-free {kind.value} log")
    ids, tracks, valid, sizes, types = builder.arrays()
    origin = Pose2D(0.0, 0.0, 0.0)
    if world_placement:
        origin = Pose2D(float(rng.uniform(-500, 500)), float(rng.uniform(-500, 500)), float(rng.uniform(-np.pi, np.pi)))
    els, route, sdv, tracks = _place(elements, _route(), sdv, tracks, origin)
    meta = dict(meta, origin=[origin.x, origin.y, origin.theta], adversarial=adversarial)
    return Episode(episode_id, kind.value, els, route, sdv, SDV_SIZE, ids, tracks, valid, sizes, types,
                   SDV_HISTORY_STEPS, num_ticks, meta)


def generate_scenarios(kind, count: int, seed: int = 0, duration: float = 10.0,
                       adversarial: bool = False) -> list:
    """``count`` episodes of one kind, deterministic under ``seed``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not MIN_DURATION <= duration <= MAX_DURATION:
        raise ValueError(f"duration must lie in [{MIN_DURATION}, {MAX_DURATION}] s, got {duration}")
    kind = ScenarioKind.parse(kind)
    rng = np.random.default_rng([seed, list(ScenarioKind).index(kind), int(adversarial)])
    return [generate_episode(kind, rng, f"{kind.value}-{seed}-{i}", duration, adversarial) for i in range(count)]


def generate_mixture(kinds, count: int, seed: int = 0, duration: float = 10.0, adversarial: bool = False) -> list:
    """``count`` episodes cycling through ``kinds``."""
    kinds = [ScenarioKind.parse(k) for k in kinds]
    per_kind = {k: generate_scenarios(k, -(-count // len(kinds)), seed, duration, adversarial) for k in kinds}
    out = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        out.append(per_kind[kind][i // len(kinds)])
    return out


def agent_speeds(track: np.ndarray) -> np.ndarray:
    """Finite-difference speed along a ``[T, 3]`` track (first entry copies the second)."""
    step = np.hypot(np.diff(track[:, 0]), np.diff(track[:, 1])) / DT
    return np.concatenate([step[:1], step]) if len(step) else np.zeros(len(track))


__all__ = ["Episode", "ScenarioKind", "generate_scenarios", "generate_mixture", "generate_episode",
           "write_episodes", "load_episodes", "wrap_angle"]
