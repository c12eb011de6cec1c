"""Independent reference implementations used only by the tests."""
import math

import numpy as np


def box_corners(cx, cy, theta, half_len, half_wid):
    c, s = math.cos(theta), math.sin(theta)
    local = [(half_len, half_wid), (-half_len, half_wid), (-half_len, -half_wid), (half_len, -half_wid)]
    return np.array([(cx + c * x - s * y, cy + s * x + c * y) for x, y in local])


def _intervals(corners, lines, axis):
    """Closed interval of a convex polygon cut by lines ``coord[axis] = lines``.

    Returns (lo, hi) along the other axis, NaN where the line misses the polygon.
    """
    other = 1 - axis
    lo = np.full(len(lines), np.inf)
    hi = np.full(len(lines), -np.inf)
    n = len(corners)
    for i in range(n):
        p, q = corners[i], corners[(i + 1) % n]
        a, b = p[axis], q[axis]
        low, high = min(a, b), max(a, b)
        inside = (lines >= low) & (lines <= high)
        if b != a:
            t = (lines - a) / (b - a)
            x = p[other] + t * (q[other] - p[other])
            lo = np.where(inside, np.minimum(lo, x), lo)
            hi = np.where(inside, np.maximum(hi, x), hi)
        else:
            on = lines == a
            lo = np.where(on, np.minimum(lo, min(p[other], q[other])), lo)
            hi = np.where(on, np.maximum(hi, max(p[other], q[other])), hi)
    return lo, hi


def raster_overlap(box_a, box_b, step=1e-3):
    """Overlap by 1 mm scanlines (horizontal and vertical) over the bounding-box intersection."""
    ca, cb = box_corners(*box_a), box_corners(*box_b)
    for axis in (0, 1):
        low = max(ca[:, axis].min(), cb[:, axis].min())
        high = min(ca[:, axis].max(), cb[:, axis].max())
        if low > high:
            return False
        lines = np.arange(low, high + step, step)
        lines = lines[lines <= high]
        if len(lines) == 0:
            lines = np.array([low])
        lo_a, hi_a = _intervals(ca, lines, axis)
        lo_b, hi_b = _intervals(cb, lines, axis)
        if np.any((np.maximum(lo_a, lo_b) <= np.minimum(hi_a, hi_b))):
            return True
    return False


def constant_curvature_rollout(x0, y0, th0, v, k, steps, dt):
    """Closed form of the semi-implicit Euler recurrence at constant speed and curvature.

    theta_n = th0 + n k v dt, and x_n = x0 + v dt sum_{i=1..n} cos(theta_i).
    """
    n = np.arange(1, steps + 1)
    th = th0 + n * k * v * dt
    if k == 0 or v == 0:
        x = x0 + v * dt * n * math.cos(th0)
        y = y0 + v * dt * n * math.sin(th0)
        return np.stack([x, y, th], -1)
    w = k * v * dt
    # geometric sum of cos/sin: sum_{i=1..n} e^{i(th0 + i w)}
    z = np.exp(1j * (th0 + w)) * (1 - np.exp(1j * w * n)) / (1 - np.exp(1j * w))
    return np.stack([x0 + v * dt * z.real, y0 + v * dt * z.imag, th], -1)


def loop_rollout(initial, jerk, curv, dt):
    """Plain scalar loop of the kinematic recurrence."""
    x, y, th, v, a = [float(s) for s in initial]
    out = []
    for j, k in zip(jerk, curv):
        a_int = a + j * dt
        v_new = max(0.0, v + a_int * dt)
        a = (v_new - v) / dt
        v = v_new
        th = th + k * v * dt
        x = x + v * math.cos(th) * dt
        y = y + v * math.sin(th) * dt
        out.append((x, y, th, v, a))
    return np.array(out)


def imitation_loss_scalar(pred, gt, mask, beta=0.0, controls=None):
    total = 0.0
    for t in range(len(gt)):
        if not mask[t]:
            continue
        d = pred[t][2] - gt[t][2]
        while d > math.pi:
            d -= 2 * math.pi
        while d <= -math.pi:
            d += 2 * math.pi
        total += abs(pred[t][0] - gt[t][0]) + abs(pred[t][1] - gt[t][1]) + abs(d)
    if controls is not None and beta:
        j = [c[0] for c in controls]
        k = [c[1] for c in controls]
        total += beta * (sum(v * v for v in j) / len(j) + sum(v * v for v in k) / len(k))
    return total
