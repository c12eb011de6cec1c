"""Oriented-box collision checks and surrogate safety measures.

All overlap tests use the closed intersection: boxes that touch overlap.
A margin ``m`` inflates each box by ``m / 2`` on every side, so two boxes
are "within m" of each other exactly when the inflated boxes overlap.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import GeometryError
from .scene import DT, Pose2D

AGENT_CONTACT_MARGIN = 0.05
STATIC_CONTACT_MARGIN = 0.01
HEADWAY_CORRIDOR_PAD = 0.5
MIN_HEADWAY_SPEED = 0.1


@dataclass(frozen=True)
class OrientedBox:
    center: Pose2D
    half_length: float
    half_width: float

    def __post_init__(self):
        if not self.center.is_finite():
            raise GeometryError("box center must be finite")
        for v in (self.half_length, self.half_width):
            if not (math.isfinite(v) and v > 0):
                raise GeometryError(f"half extents must be positive and finite, got {v}")

    @classmethod
    def from_size(cls, pose: Pose2D, size) -> "OrientedBox":
        length, width = size
        return cls(pose, 0.5 * float(length), 0.5 * float(width))

    def corners(self) -> np.ndarray:
        c, s = math.cos(self.center.theta), math.sin(self.center.theta)
        local = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]], float) * [self.half_length, self.half_width]
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + [self.center.x, self.center.y]


def _axis_gaps(ca, ha, cb, hb):
    """Per-axis gap ``|d.u| - r_a - r_b`` for the four box axes, stacked last."""
    ca, cb = np.asarray(ca, float), np.asarray(cb, float)
    ha, hb = np.asarray(ha, float), np.asarray(hb, float)
    ta, tb = ca[..., 2], cb[..., 2]
    a1 = np.stack([np.cos(ta), np.sin(ta)], -1)
    a2 = np.stack([-np.sin(ta), np.cos(ta)], -1)
    b1 = np.stack([np.cos(tb), np.sin(tb)], -1)
    b2 = np.stack([-np.sin(tb), np.cos(tb)], -1)
    d = cb[..., :2] - ca[..., :2]

    def dot(u, v):
        return u[..., 0] * v[..., 0] + u[..., 1] * v[..., 1]

    c11, c12 = np.abs(dot(a1, b1)), np.abs(dot(a1, b2))
    c21, c22 = np.abs(dot(a2, b1)), np.abs(dot(a2, b2))
    hal, haw = ha[..., 0], ha[..., 1]
    hbl, hbw = hb[..., 0], hb[..., 1]
    gaps = [
        np.abs(dot(d, a1)) - hal - (hbl * c11 + hbw * c12),
        np.abs(dot(d, a2)) - haw - (hbl * c21 + hbw * c22),
        np.abs(dot(d, b1)) - hbl - (hal * c11 + haw * c21),
        np.abs(dot(d, b2)) - hbw - (hal * c12 + haw * c22),
    ]
    return np.stack(np.broadcast_arrays(*gaps), -1)


def overlap_arrays(ca, ha, cb, hb, margin: float = 0.0) -> np.ndarray:
    """Vectorized SAT test.

    ``ca``/``cb`` are ``[..., 3]`` centers (x, y, theta) and ``ha``/``hb``
    ``[..., 2]`` half extents (length, width); leading axes broadcast.
    """
    if margin < 0 or not math.isfinite(margin):
        raise GeometryError(f"margin must be finite and >= 0, got {margin}")
    pad = 0.5 * margin
    gaps = _axis_gaps(ca, np.asarray(ha, float) + pad, cb, np.asarray(hb, float) + pad)
    return np.all(gaps <= 0.0, axis=-1)


def _box_arrays(box: OrientedBox):
    return box.center.as_array(), np.array([box.half_length, box.half_width])


def sat_overlap(a: OrientedBox, b: OrientedBox, margin: float = 0.0) -> bool:
    """True iff ``a`` and ``b`` are within ``margin`` of each other."""
    ca, ha = _box_arrays(a)
    cb, hb = _box_arrays(b)
    if not (np.all(np.isfinite(ca)) and np.all(np.isfinite(cb))):
        raise GeometryError("non-finite box")
    return bool(overlap_arrays(ca, ha, cb, hb, margin))


def signed_separation(a: OrientedBox, b: OrientedBox) -> float:
    """Largest SAT axis gap: positive when separated, minus the penetration depth otherwise."""
    ca, ha = _box_arrays(a)
    cb, hb = _box_arrays(b)
    return float(np.max(_axis_gaps(ca, ha, cb, hb)))


def _hold_last(traj: np.ndarray, length: int) -> np.ndarray:
    traj = np.asarray(traj, float)[..., :3]
    if traj.shape[-2] >= length:
        return traj[..., :length, :]
    pad = np.repeat(traj[..., -1:, :], length - traj.shape[-2], axis=-2)
    return np.concatenate([traj, pad], axis=-2)


def collision_matrix(sdv_trajs, sdv_size, agent_trajs, agent_sizes, margin: float = 0.0) -> np.ndarray:
    """Overlap flags ``[N, A, T]`` between N SDV candidates and A agents.

    ``sdv_trajs`` is ``[N, T, >=3]``; ``agent_trajs`` is ``[A, T_a, >=3]`` and
    agents shorter than ``T`` hold their last pose.
    """
    sdv_trajs = np.asarray(sdv_trajs, float)[..., :3]
    n, t = sdv_trajs.shape[:2]
    if t == 0:
        raise GeometryError("empty SDV trajectory")
    a = len(agent_trajs)
    if a == 0:
        return np.zeros((n, 0, t), bool)
    agents = np.stack([_hold_last(tr, t) for tr in agent_trajs])  # [A, T, 3]
    ha = 0.5 * np.asarray(sdv_size, float)
    hb = 0.5 * np.asarray(agent_sizes, float)[None, :, None, :]  # [1, A, 1, 2]
    return overlap_arrays(sdv_trajs[:, None], ha, agents[None], hb, margin)


def first_collision_timesteps(sdv_trajs, sdv_size, agent_trajs, agent_sizes, margin: float = 0.0) -> np.ndarray:
    """1-based first colliding step per SDV candidate, 0 where collision free."""
    hits = collision_matrix(sdv_trajs, sdv_size, agent_trajs, agent_sizes, margin).any(axis=1)  # [N, T]
    first = np.argmax(hits, axis=1) + 1
    return np.where(hits.any(axis=1), first, 0)


def first_collision_timestep(sdv_traj, sdv_size, agents: Sequence, margin: float = 0.0) -> Optional[int]:
    """Smallest step ``t`` (1-based) at which the SDV box meets any agent box.

    ``agents`` is a sequence of ``(trajectory [T_a, >=3], (length, width))``.
    Returns None when no step collides.
    """
    sdv_traj = np.asarray(sdv_traj, float)
    if sdv_traj.ndim != 2 or len(sdv_traj) == 0:
        raise GeometryError("empty SDV trajectory")
    if not agents:
        return None
    trajs = [tr for tr, _ in agents]
    sizes = [size for _, size in agents]
    t = int(first_collision_timesteps(sdv_traj[None], sdv_size, trajs, sizes, margin)[0])
    return t if t > 0 else None


def time_to_collision(sdv_state, agent_state, sdv_size, agent_size, horizon: float = 1.5,
                      dt: float = DT) -> Optional[float]:
    """First grid time in ``(0, horizon]`` at which constant-velocity boxes overlap.

    States are ``(x, y, theta, vx, vy)``; headings stay fixed.
    """
    s = np.asarray(sdv_state, float)
    a = np.asarray(agent_state, float)
    if not (np.all(np.isfinite(s)) and np.all(np.isfinite(a)) and math.isfinite(horizon)):
        raise GeometryError("non-finite state")
    n = int(math.floor(horizon / dt + 1e-9))
    if n < 1:
        return None
    times = np.arange(1, n + 1) * dt
    sc = np.stack([s[0] + s[3] * times, s[1] + s[4] * times, np.full(n, s[2])], -1)
    ac = np.stack([a[0] + a[3] * times, a[1] + a[4] * times, np.full(n, a[2])], -1)
    hit = overlap_arrays(sc, 0.5 * np.asarray(sdv_size, float), ac, 0.5 * np.asarray(agent_size, float))
    if not hit.any():
        return None
    return float(times[np.argmax(hit)])


def time_headway(sdv_pose: Pose2D, sdv_speed: float, sdv_size, others: Sequence) -> Optional[float]:
    """Bumper gap to the nearest box ahead inside the SDV corridor, over SDV speed.

    ``others`` holds ``(pose, (length, width))`` pairs. The corridor runs
    forward along the SDV heading and is the SDV width plus 0.5 m per side.
    """
    if sdv_speed < MIN_HEADWAY_SPEED or not others:
        return None
    half_len = 0.5 * sdv_size[0]
    half_corr = 0.5 * sdv_size[1] + HEADWAY_CORRIDOR_PAD
    best = None
    for pose, size in others:
        pose = pose if isinstance(pose, Pose2D) else Pose2D(*np.asarray(pose)[:3])
        corners = OrientedBox.from_size(sdv_pose.relative(pose), size).corners()
        if corners[:, 1].min() > half_corr or corners[:, 1].max() < -half_corr:
            continue
        gap = corners[:, 0].min() - half_len
        if gap <= 0:
            continue
        if best is None or gap < best:
            best = gap
    if best is None:
        return None
    return best / sdv_speed
