import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from moeplan.scene import (AGENT_HISTORY_STEPS, SDV_HISTORY_STEPS, AgentSnapshot, ElementType, GroundTruth,
                           PolylineElement, Pose2D, SdvSnapshot, VectorScene)

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_scene(rng=None, n_agents=3, n_map=4, world=True, with_gt=True, t_s=45, t_a=30) -> VectorScene:
    """Small random scene; world-frame by default."""
    rng = np.random.default_rng(0) if rng is None else rng
    origin = Pose2D(*rng.uniform(-50, 50, 2), rng.uniform(-np.pi, np.pi)) if world else Pose2D(0, 0, 0)
    sdv = SdvSnapshot(origin, float(rng.uniform(0, 15)), float(rng.uniform(-2, 2)), (4.5, 1.9),
                      tuple(bool(b) for b in rng.random(SDV_HISTORY_STEPS) > 0.2))
    agents = []
    for i in range(n_agents):
        start = rng.uniform(-40, 40, 2) + [origin.x, origin.y]
        heading = rng.uniform(-np.pi, np.pi)
        v = rng.uniform(0, 10)
        t = np.arange(AGENT_HISTORY_STEPS) * 0.1
        hist = np.stack([start[0] + v * np.cos(heading) * t, start[1] + v * np.sin(heading) * t,
                         np.full_like(t, heading)], -1)
        agents.append(AgentSnapshot(f"a{i}", hist, (4.5, 2.0)))
    elements = []
    for i in range(n_map):
        pts = np.cumsum(rng.normal(size=(int(rng.integers(2, 30)), 3)), axis=0)
        pts[:, :2] += [origin.x, origin.y]
        elements.append(PolylineElement(ElementType.LANE_CENTER, pts, f"m{i}"))
    route = PolylineElement(ElementType.ROUTE_GOAL, np.array([[origin.x, origin.y, 0.0],
                                                              [origin.x + 50, origin.y, 0.0]]), "route")
    gt = None
    if with_gt:
        fut = np.concatenate([rng.normal(size=(t_s, 3)).cumsum(0), rng.uniform(0, 10, (t_s, 2))], -1)
        fut[:, :2] += [origin.x, origin.y]
        gt = GroundTruth(fut, rng.normal(size=(n_agents, t_a, 3)) + [origin.x, origin.y, 0],
                         rng.random((n_agents, t_a)) > 0.1)
    return VectorScene(sdv, tuple(agents), tuple(elements), route, 1.0, gt)


@pytest.fixture
def scene():
    return make_scene()
