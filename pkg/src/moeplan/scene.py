"""Vectorized driving-scene data model.

A scene is a set of typed polylines (SDV, agents, map, route). Scenes live
either in a world frame or in the SDV-centric frame produced by
:func:`transform_to_sdv_frame`; the latter keeps the world pose of its origin
so the transform can be undone.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import InvalidScene, ParseError

TICK_RATE = 10
DT = 1.0 / TICK_RATE
SDV_HISTORY_SECONDS = 3
AGENT_HISTORY_SECONDS = 1
SDV_HISTORY_STEPS = SDV_HISTORY_SECONDS * TICK_RATE
AGENT_HISTORY_STEPS = AGENT_HISTORY_SECONDS * TICK_RATE + 1
MOVING_SPEED = 0.2


class ElementType(enum.IntEnum):
    SDV_HISTORY = 0
    AGENT_HISTORY = 1
    LANE_BOUNDARY = 2
    LANE_CENTER = 3
    CROSSWALK = 4
    INTERSECTION = 5
    STATIC_OBSTACLE = 6
    TRAFFIC_LIGHT = 7
    ROUTE_GOAL = 8


class AgentType(enum.IntEnum):
    VEHICLE = 0
    PEDESTRIAN = 1
    CYCLIST = 2


class TrafficLightStatus(enum.IntEnum):
    UNKNOWN = 0
    RED = 1
    GREEN = 2


def wrap_angle(theta):
    """Wrap angles to (-pi, pi]. Works on floats and arrays."""
    return theta - 2.0 * np.pi * np.ceil((theta - np.pi) / (2.0 * np.pi))


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Pose2D:
    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", float(wrap_angle(float(self.theta))))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)

    def compose(self, other: "Pose2D") -> "Pose2D":
        """Pose ``other`` (expressed in this pose's frame) in the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(self.x + c * other.x - s * other.y,
                      self.y + s * other.x + c * other.y,
                      self.theta + other.theta)

    def inverse(self) -> "Pose2D":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2D(-c * self.x - s * self.y, s * self.x - c * self.y, -self.theta)

    def relative(self, other: "Pose2D") -> "Pose2D":
        """Pose ``other`` (parent frame) expressed in this pose's frame."""
        return self.inverse().compose(other)


def to_local(poses: np.ndarray, origin: Pose2D) -> np.ndarray:
    """Express ``[..., 3]`` poses (parent frame) in the frame of ``origin``."""
    poses = np.asarray(poses, dtype=float)
    c, s = math.cos(origin.theta), math.sin(origin.theta)
    dx = poses[..., 0] - origin.x
    dy = poses[..., 1] - origin.y
    out = np.empty_like(poses)
    out[..., 0] = c * dx + s * dy
    out[..., 1] = -s * dx + c * dy
    out[..., 2] = wrap_angle(poses[..., 2] - origin.theta)
    return out


def to_parent(poses: np.ndarray, origin: Pose2D) -> np.ndarray:
    """Inverse of :func:`to_local`."""
    poses = np.asarray(poses, dtype=float)
    c, s = math.cos(origin.theta), math.sin(origin.theta)
    out = np.empty_like(poses)
    out[..., 0] = origin.x + c * poses[..., 0] - s * poses[..., 1]
    out[..., 1] = origin.y + s * poses[..., 0] + c * poses[..., 1]
    out[..., 2] = wrap_angle(poses[..., 2] + origin.theta)
    return out


@dataclass(frozen=True)
class PolylineElement:
    """Ordered points ``[P, 3]`` (x, y, theta) sharing one element type.

    ``attributes`` carries per-element scalars: ``tl_status`` for traffic
    lights, ``length``/``width`` for static obstacles.
    """

    element_type: ElementType
    points: np.ndarray
    source_id: str = ""
    attributes: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "element_type", ElementType(self.element_type))
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(pts) == 0:
            raise InvalidScene(f"polyline {self.source_id!r} has no points")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "attributes", {k: float(v) for k, v in self.attributes.items()})


@dataclass(frozen=True)
class SdvSnapshot:
    pose: Pose2D
    speed: float
    acceleration: float
    size: tuple  # (length, width)
    moving_history: tuple = (True,) * SDV_HISTORY_STEPS

    def __post_init__(self):
        object.__setattr__(self, "speed", float(self.speed))
        object.__setattr__(self, "acceleration", float(self.acceleration))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "moving_history", tuple(bool(v) for v in self.moving_history))


@dataclass(frozen=True)
class AgentSnapshot:
    """An agent with poses ``[K+1, 3]``, oldest first; the last row is now."""

    agent_id: str
    pose_history: np.ndarray
    size: tuple
    agent_type: AgentType = AgentType.VEHICLE

    def __post_init__(self):
        object.__setattr__(self, "pose_history", _frozen(np.asarray(self.pose_history, float).reshape(-1, 3)))
        object.__setattr__(self, "size", tuple(float(v) for v in self.size))
        object.__setattr__(self, "agent_type", AgentType(self.agent_type))

    @property
    def pose(self) -> Pose2D:
        return Pose2D(*self.pose_history[-1])


@dataclass(frozen=True)
class GroundTruth:
    """Logged futures.

    ``sdv_future`` is ``[T_s, 5]`` (x, y, theta, v, a); ``agent_futures`` is
    ``[A, T_a, 3]`` aligned with ``VectorScene.agents``; ``agent_valid`` marks
    steps where the agent is still observed.
    """

    sdv_future: np.ndarray
    agent_futures: np.ndarray
    agent_valid: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "sdv_future", _frozen(np.asarray(self.sdv_future, float).reshape(-1, 5)))
        fut = np.asarray(self.agent_futures, float)
        valid = np.asarray(self.agent_valid, bool)
        if fut.size == 0:
            t_a = valid.shape[1] if valid.ndim == 2 else 0
            fut = fut.reshape(0, t_a, 3)
            valid = valid.reshape(0, t_a)
        object.__setattr__(self, "agent_futures", _frozen(fut))
        object.__setattr__(self, "agent_valid", _frozen(valid, bool))


@dataclass(frozen=True)
class VectorScene:
    sdv: SdvSnapshot
    agents: tuple
    map_elements: tuple
    route: PolylineElement
    timestamp: float = 0.0
    ground_truth: Optional[GroundTruth] = None
    # world pose of the SDV-centric frame; None for world-frame scenes
    frame_origin: Optional[Pose2D] = None

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "map_elements", tuple(self.map_elements))
        object.__setattr__(self, "timestamp", float(self.timestamp))


def validate_scene(scene: VectorScene, line=None) -> None:
    sdv = scene.sdv
    if not sdv.pose.is_finite() or not (math.isfinite(sdv.speed) and math.isfinite(sdv.acceleration)):
        raise InvalidScene("non-finite SDV state", line)
    if sdv.speed < 0:
        raise InvalidScene("negative SDV speed", line)
    if len(sdv.size) != 2 or min(sdv.size) <= 0:
        raise InvalidScene("SDV size must be two positive values", line)
    if len(sdv.moving_history) != SDV_HISTORY_STEPS:
        raise InvalidScene(f"moving_history must have {SDV_HISTORY_STEPS} entries", line)
    for agent in scene.agents:
        if len(agent.pose_history) != AGENT_HISTORY_STEPS:
            raise InvalidScene(f"agent {agent.agent_id}: pose_history must have {AGENT_HISTORY_STEPS} rows", line)
        if not np.all(np.isfinite(agent.pose_history)):
            raise InvalidScene(f"agent {agent.agent_id}: non-finite pose", line)
        if min(agent.size) <= 0:
            raise InvalidScene(f"agent {agent.agent_id}: non-positive size", line)
    for el in (*scene.map_elements, scene.route):
        if not np.all(np.isfinite(el.points)):
            raise InvalidScene(f"element {el.source_id!r}: non-finite point", line)
    if scene.route.element_type != ElementType.ROUTE_GOAL:
        raise InvalidScene("route must have element_type ROUTE_GOAL", line)
    gt = scene.ground_truth
    if gt is not None:
        if gt.agent_futures.shape[0] != len(scene.agents):
            raise InvalidScene("ground truth agent count does not match agents", line)
        if not np.all(np.isfinite(gt.sdv_future)) or not np.all(np.isfinite(gt.agent_futures)):
            raise InvalidScene("non-finite ground truth", line)


def _map_scene(scene: VectorScene, fn, frame_origin) -> VectorScene:
    agents = tuple(replace(a, pose_history=fn(a.pose_history)) for a in scene.agents)
    elements = tuple(replace(e, points=fn(e.points)) for e in scene.map_elements)
    route = replace(scene.route, points=fn(scene.route.points))
    gt = scene.ground_truth
    if gt is not None:
        sdv_future = np.array(gt.sdv_future)
        sdv_future[:, :3] = fn(sdv_future[:, :3])
        gt = GroundTruth(sdv_future, fn(gt.agent_futures), gt.agent_valid)
    return replace(scene, agents=agents, map_elements=elements, route=route,
                   ground_truth=gt, frame_origin=frame_origin)


def transform_to_sdv_frame(scene: VectorScene) -> VectorScene:
    """Re-express every pose relative to the SDV's current pose."""
    origin = scene.sdv.pose
    if not origin.is_finite():
        raise InvalidScene("non-finite SDV pose")
    for agent in scene.agents:
        if not np.all(np.isfinite(agent.pose_history)):
            raise InvalidScene(f"agent {agent.agent_id}: non-finite pose")
    for el in (*scene.map_elements, scene.route):
        if not np.all(np.isfinite(el.points)):
            raise InvalidScene(f"element {el.source_id!r}: non-finite point")
    new_origin = origin if scene.frame_origin is None else scene.frame_origin.compose(origin)
    out = _map_scene(scene, lambda p: to_local(p, origin), new_origin)
    return replace(out, sdv=replace(scene.sdv, pose=Pose2D(0.0, 0.0, 0.0)))


def transform_to_world(scene: VectorScene) -> VectorScene:
    """Undo :func:`transform_to_sdv_frame` using the stored frame origin."""
    origin = scene.frame_origin
    if origin is None:
        return scene
    out = _map_scene(scene, lambda p: to_parent(p, origin), None)
    return replace(out, sdv=replace(scene.sdv, pose=origin.compose(scene.sdv.pose)))


# --------------------------------------------------------------------------
# serialization

def _pose_dict(p: Pose2D) -> list:
    return [p.x, p.y, p.theta]


def _element_dict(e: PolylineElement) -> dict:
    return {"type": e.element_type.name, "points": e.points.tolist(),
            "source_id": e.source_id, "attributes": dict(e.attributes)}


def _element_from(d: dict) -> PolylineElement:
    return PolylineElement(ElementType[d["type"]], np.array(d["points"], float).reshape(-1, 3),
                           d.get("source_id", ""), d.get("attributes", {}))


def scene_to_dict(scene: VectorScene) -> dict:
    sdv = scene.sdv
    out = {
        "timestamp": scene.timestamp,
        "sdv": {"pose": _pose_dict(sdv.pose), "speed": sdv.speed, "acceleration": sdv.acceleration,
                "size": list(sdv.size), "moving_history": [int(v) for v in sdv.moving_history]},
        "agents": [{"id": a.agent_id, "pose_history": a.pose_history.tolist(), "size": list(a.size),
                    "type": a.agent_type.name} for a in scene.agents],
        "map_elements": [_element_dict(e) for e in scene.map_elements],
        "route": _element_dict(scene.route),
        "ground_truth": None,
    }
    gt = scene.ground_truth
    if gt is not None:
        out["ground_truth"] = {"sdv_future": gt.sdv_future.tolist(),
                               "agent_futures": gt.agent_futures.tolist(),
                               "agent_valid": gt.agent_valid.astype(int).tolist(),
                               "horizon_agent": int(gt.agent_valid.shape[1])}
    if scene.frame_origin is not None:
        out["frame_origin"] = _pose_dict(scene.frame_origin)
    return out


def scene_from_dict(d: dict) -> VectorScene:
    s = d["sdv"]
    sdv = SdvSnapshot(Pose2D(*s["pose"]), s["speed"], s["acceleration"], tuple(s["size"]),
                      tuple(bool(v) for v in s["moving_history"]))
    agents = tuple(AgentSnapshot(a["id"], np.array(a["pose_history"], float), tuple(a["size"]),
                                 AgentType[a.get("type", "VEHICLE")]) for a in d["agents"])
    gt = None
    g = d.get("ground_truth")
    if g is not None:
        t_a = g.get("horizon_agent", 0)
        gt = GroundTruth(np.array(g["sdv_future"], float),
                         np.array(g["agent_futures"], float).reshape(len(agents), -1, 3) if agents else np.zeros((0, t_a, 3)),
                         np.array(g["agent_valid"], bool).reshape(len(agents), -1) if agents else np.zeros((0, t_a), bool))
    origin = d.get("frame_origin")
    return VectorScene(sdv=sdv, agents=agents,
                       map_elements=tuple(_element_from(e) for e in d["map_elements"]),
                       route=_element_from(d["route"]), timestamp=d["timestamp"], ground_truth=gt,
                       frame_origin=Pose2D(*origin) if origin is not None else None)


def write_scenes(path, scenes: Iterable[VectorScene]) -> None:
    with open(path, "w") as fh:
        for scene in scenes:
            fh.write(json.dumps(scene_to_dict(scene)) + "\n")


def load_scenes(path) -> list:
    """Read one scene per line. Errors carry the 1-based line number."""
    scenes = []
    with open(Path(path)) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                scene = scene_from_dict(record)
            except InvalidScene as exc:
                raise InvalidScene(str(exc), lineno) from exc
            except (ValueError, KeyError, TypeError, IndexError) as exc:
                raise ParseError(f"{type(exc).__name__}: {exc}", lineno) from exc
            validate_scene(scene, lineno)
            scenes.append(scene)
    return scenes


# --------------------------------------------------------------------------
# network staging

@dataclass(frozen=True)
class NetworkLimits:
    a_max: int = 16
    e_max: int = 64
    p_max: int = 20

    def __post_init__(self):
        if self.e_max < self.a_max + 2:
            raise ValueError("e_max must leave room for the SDV, all agent slots and the route")


# feature layout of one point
F_X, F_Y, F_COS, F_SIN = 0, 1, 2, 3
F_SPEED, F_ACCEL, F_LENGTH, F_WIDTH, F_MOVING, F_TIME, F_TL = range(4, 11)
F_AGENT_TYPE = 11
F_HISTORY = F_AGENT_TYPE + len(AgentType)
F_ELEMENT_TYPE = F_HISTORY + SDV_HISTORY_STEPS
N_FEATURES = F_ELEMENT_TYPE + len(ElementType)


@dataclass
class FlatScene:
    """Fixed-shape network input for one scene.

    Slot 0 holds the SDV, slots ``1..a_max`` agents and the rest map elements
    with the route first.
    """

    elements: np.ndarray       # [E, P, F]
    point_mask: np.ndarray     # [E, P]
    element_mask: np.ndarray   # [E]
    agent_index: np.ndarray    # [A] index into scene.agents, -1 when empty
    agent_pose: np.ndarray     # [A, 3] current agent pose (SDV frame)
    sdv_state: np.ndarray      # [5] x, y, theta, v, a


def _nearest(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` points closest to the origin, in original order."""
    if len(points) <= k:
        return np.arange(len(points))
    d = np.hypot(points[:, 0], points[:, 1])
    keep = np.argsort(d, kind="stable")[:k]
    return np.sort(keep)


def _distance(points: np.ndarray) -> float:
    return float(np.min(np.hypot(points[:, 0], points[:, 1])))


def _sdv_features(sdv: SdvSnapshot) -> np.ndarray:
    f = np.zeros(N_FEATURES)
    f[F_X], f[F_Y] = sdv.pose.x, sdv.pose.y
    f[F_COS], f[F_SIN] = math.cos(sdv.pose.theta), math.sin(sdv.pose.theta)
    f[F_SPEED], f[F_ACCEL] = sdv.speed, sdv.acceleration
    f[F_LENGTH], f[F_WIDTH] = sdv.size
    f[F_MOVING] = float(sdv.moving_history[-1])
    f[F_HISTORY:F_HISTORY + SDV_HISTORY_STEPS] = np.asarray(sdv.moving_history, float)
    f[F_ELEMENT_TYPE + ElementType.SDV_HISTORY] = 1.0
    return f


def _agent_features(agent: AgentSnapshot, keep: np.ndarray) -> np.ndarray:
    poses = agent.pose_history
    n = len(poses)
    f = np.zeros((n, N_FEATURES))
    if n > 1:
        step = np.hypot(np.diff(poses[:, 0]), np.diff(poses[:, 1])) / DT
        speed = np.concatenate([step[:1], step])
    else:
        speed = np.zeros(1)
    accel = np.concatenate([[0.0], np.diff(speed) / DT])
    f[:, F_X], f[:, F_Y] = poses[:, 0], poses[:, 1]
    f[:, F_COS], f[:, F_SIN] = np.cos(poses[:, 2]), np.sin(poses[:, 2])
    f[:, F_SPEED], f[:, F_ACCEL] = speed, accel
    f[:, F_LENGTH], f[:, F_WIDTH] = agent.size
    f[:, F_MOVING] = speed > MOVING_SPEED
    f[:, F_TIME] = (np.arange(n) - (n - 1)) * DT
    f[:, F_AGENT_TYPE + agent.agent_type] = 1.0
    f[:, F_ELEMENT_TYPE + ElementType.AGENT_HISTORY] = 1.0
    return f[keep]


def _map_features(el: PolylineElement, keep: np.ndarray) -> np.ndarray:
    pts = el.points[keep]
    f = np.zeros((len(pts), N_FEATURES))
    f[:, F_X], f[:, F_Y] = pts[:, 0], pts[:, 1]
    f[:, F_COS], f[:, F_SIN] = np.cos(pts[:, 2]), np.sin(pts[:, 2])
    f[:, F_LENGTH] = el.attributes.get("length", 0.0)
    f[:, F_WIDTH] = el.attributes.get("width", 0.0)
    f[:, F_TL] = el.attributes.get("tl_status", 0.0)
    f[:, F_ELEMENT_TYPE + el.element_type] = 1.0
    return f


def flatten_for_network(scene: VectorScene, limits: NetworkLimits = NetworkLimits()) -> FlatScene:
    """Pad/truncate a SDV-frame scene into fixed-shape arrays.

    Agents and map elements beyond the limits are dropped farthest first
    (distance of the closest point to the SDV, ties by index); points within
    an element are truncated the same way.
    """
    a_max, e_max, p_max = limits.a_max, limits.e_max, limits.p_max
    elements = np.zeros((e_max, p_max, N_FEATURES))
    point_mask = np.zeros((e_max, p_max), bool)
    element_mask = np.zeros(e_max, bool)
    agent_index = np.full(a_max, -1)
    agent_pose = np.zeros((a_max, 3))

    elements[0, 0] = _sdv_features(scene.sdv)
    point_mask[0, 0] = True
    element_mask[0] = True

    dists = [_distance(a.pose_history) for a in scene.agents]
    order = sorted(range(len(scene.agents)), key=lambda i: (dists[i], i))[:a_max]
    for slot, i in enumerate(order, start=1):
        agent = scene.agents[i]
        keep = _nearest(agent.pose_history, p_max)
        # the current pose must survive truncation
        if len(agent.pose_history) - 1 not in keep:
            keep = np.concatenate([keep[1:], [len(agent.pose_history) - 1]])
        feats = _agent_features(agent, keep)
        elements[slot, :len(feats)] = feats
        point_mask[slot, :len(feats)] = True
        element_mask[slot] = True
        agent_index[slot - 1] = i
        agent_pose[slot - 1] = agent.pose_history[-1]

    n_map = e_max - a_max - 1
    map_dists = [_distance(e.points) for e in scene.map_elements]
    map_order = sorted(range(len(scene.map_elements)), key=lambda i: (map_dists[i], i))[:n_map - 1]
    map_items = [scene.route] + [scene.map_elements[i] for i in map_order]
    for slot, el in enumerate(map_items, start=a_max + 1):
        keep = _nearest(el.points, p_max)
        feats = _map_features(el, keep)
        elements[slot, :len(feats)] = feats
        point_mask[slot, :len(feats)] = True
        element_mask[slot] = True

    if not element_mask.any():
        raise InvalidScene("scene has no available elements")
    sdv = scene.sdv
    sdv_state = np.array([sdv.pose.x, sdv.pose.y, sdv.pose.theta, sdv.speed, sdv.acceleration])
    return FlatScene(elements, point_mask, element_mask, agent_index, agent_pose, sdv_state)


def stack_flat(flats: Sequence[FlatScene]) -> dict:
    """Stack per-scene arrays along a new leading batch axis."""
    return {
        "elements": np.stack([f.elements for f in flats]),
        "point_mask": np.stack([f.point_mask for f in flats]),
        "element_mask": np.stack([f.element_mask for f in flats]),
        "agent_index": np.stack([f.agent_index for f in flats]),
        "agent_pose": np.stack([f.agent_pose for f in flats]),
        "sdv_state": np.stack([f.sdv_state for f in flats]),
    }
