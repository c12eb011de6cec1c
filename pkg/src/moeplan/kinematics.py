"""Unicycle kinematic model driven by per-step jerk and curvature.

One step of length ``dt`` (semi-implicit Euler, post-update values)::

    a_int = a + j * dt
    v'    = max(0, v + a_int * dt)
    a'    = (v' - v) / dt          # stored acceleration, honours the clamp
    theta' = theta + k * v' * dt
    x'    = x + v' * cos(theta') * dt
    y'    = y + v' * sin(theta') * dt

Headings are not wrapped so curvature integrates continuously.
"""
from __future__ import annotations

import numpy as np

from .errors import KinematicsError
from .scene import DT

K_MAX = 0.3
J_MAX = 15.0

STATE_FIELDS = ("x", "y", "theta", "v", "a", "k", "j")
X, Y, THETA, V, A, K, J = range(7)


def clamp_controls(jerk, curvature, j_max: float = J_MAX, k_max: float = K_MAX):
    return np.clip(jerk, -j_max, j_max), np.clip(curvature, -k_max, k_max)


def _check(initial, jerk, curvature, dt):
    if not dt > 0:
        raise KinematicsError(f"dt must be positive, got {dt}")
    if not (np.all(np.isfinite(jerk)) and np.all(np.isfinite(curvature))):
        raise KinematicsError("non-finite control")
    if not np.all(np.isfinite(initial)):
        raise KinematicsError("non-finite initial state")


def rollout_states(initial, jerk, curvature, dt: float = DT):
    """Batched rollout.

    ``initial`` is ``[..., 5]`` (x, y, theta, v, a); ``jerk`` and
    ``curvature`` are ``[..., T]``. Returns states ``[..., T, 5]`` and the
    ``[..., T]`` mask of steps where the speed clamp was inactive.
    """
    initial = np.asarray(initial, float)
    jerk = np.asarray(jerk, float)
    curvature = np.asarray(curvature, float)
    _check(initial, jerk, curvature, dt)
    t_len = jerk.shape[-1]
    batch = np.broadcast_shapes(initial.shape[:-1], jerk.shape[:-1], curvature.shape[:-1])
    out = np.empty(batch + (t_len, 5))
    free = np.empty(batch + (t_len,), bool)
    x = np.broadcast_to(initial[..., 0], batch).copy()
    y = np.broadcast_to(initial[..., 1], batch).copy()
    th = np.broadcast_to(initial[..., 2], batch).copy()
    v = np.broadcast_to(initial[..., 3], batch).copy()
    a = np.broadcast_to(initial[..., 4], batch).copy()
    for t in range(t_len):
        a_int = a + jerk[..., t] * dt
        vp = v + a_int * dt
        c = vp > 0.0
        v_new = np.where(c, vp, 0.0)
        a = (v_new - v) / dt
        v = v_new
        th = th + curvature[..., t] * v * dt
        x = x + v * np.cos(th) * dt
        y = y + v * np.sin(th) * dt
        out[..., t, 0], out[..., t, 1], out[..., t, 2] = x, y, th
        out[..., t, 3], out[..., t, 4] = v, a
        free[..., t] = c
    return out, free


def rollout_vjp(states, free, curvature, grad_states, dt: float = DT):
    """Reverse pass of :func:`rollout_states`.

    ``grad_states`` is ``[..., T, 5]``. Returns gradients with respect to jerk,
    curvature (both ``[..., T]``) and the initial state ``[..., 5]``.
    Where the speed clamp is active the sub-gradient through it is zero.
    """
    t_len = states.shape[-2]
    batch = states.shape[:-2]
    g_jerk = np.zeros(batch + (t_len,))
    g_curv = np.zeros(batch + (t_len,))
    gx = np.zeros(batch)
    gy = np.zeros(batch)
    gth = np.zeros(batch)
    gv = np.zeros(batch)
    ga = np.zeros(batch)
    for t in range(t_len - 1, -1, -1):
        gx = gx + grad_states[..., t, 0]
        gy = gy + grad_states[..., t, 1]
        gth = gth + grad_states[..., t, 2]
        gv = gv + grad_states[..., t, 3]
        ga = ga + grad_states[..., t, 4]
        v, th = states[..., t, 3], states[..., t, 2]
        cos, sin = np.cos(th), np.sin(th)
        gth = gth - gx * v * sin * dt + gy * v * cos * dt
        gv_new = gv + (gx * cos + gy * sin) * dt + gth * curvature[..., t] * dt + ga / dt
        g_curv[..., t] = gth * v * dt
        gvp = np.where(free[..., t], gv_new, 0.0)
        g_a_int = gvp * dt
        g_jerk[..., t] = g_a_int * dt
        gv = gvp - ga / dt
        ga = g_a_int
    g_init = np.stack([gx, gy, gth, gv, ga], -1)
    return g_jerk, g_curv, g_init


def rollout_unicycle(initial, controls, dt: float = DT) -> np.ndarray:
    """Roll out a single trajectory.

    ``initial`` is ``(x0, y0, theta0, v0, a0)`` and ``controls`` is ``[T, 2]``
    of (jerk, curvature). Returns ``[T, 7]`` states ordered as
    :data:`STATE_FIELDS`.
    """
    controls = np.asarray(controls, float).reshape(-1, 2)
    states, _ = rollout_states(np.asarray(initial, float), controls[:, 0], controls[:, 1], dt)
    return np.concatenate([states, controls[:, [1, 0]]], axis=-1)


def extract_controls(traj: np.ndarray) -> np.ndarray:
    """``[..., T, 2]`` (jerk, curvature) columns of a ``[..., T, 7]`` trajectory."""
    return np.stack([traj[..., J], traj[..., K]], -1)


def rollout_tensor(initial, jerk, curvature, dt: float = DT):
    """Differentiable rollout inside the autodiff graph.

    ``initial`` is a constant ``[..., 5]`` array; ``jerk`` and ``curvature``
    are :class:`~moeplan.diff.Tensor` of shape ``[..., T]``. Returns a tensor
    of states ``[..., T, 5]``.
    """
    from .diff import tensor as ops

    states, free = rollout_states(initial, jerk.data, curvature.data, dt)

    def backward(g):
        g_jerk, g_curv, _ = rollout_vjp(states, free, curvature.data, g, dt)
        return g_jerk, g_curv

    return ops.custom(states, (jerk, curvature), backward)
