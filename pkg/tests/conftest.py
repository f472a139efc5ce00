import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from swarmtrack.geometry import CameraModel, look_at_camera

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_rig():
    """Two orthogonal cameras 50 units from the origin."""
    c1 = look_at_camera((0.0, -50.0, 0.0), (0, 0, 0), 800.0, 640, 480, view_id=1)
    c2 = look_at_camera((-50.0, 0.0, 0.0), (0, 0, 0), 800.0, 640, 480, view_id=2)
    return [c1, c2]


@pytest.fixture
def rig():
    return make_rig()


def random_camera(rng, view_id=0) -> CameraModel:
    """Camera with random pose and intrinsics looking roughly at the origin."""
    d = rng.uniform(20, 60)
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    pos = d * direction
    target = rng.normal(scale=2.0, size=3)
    f = rng.uniform(300, 1500)
    up = (0, 0, 1) if abs(direction[2]) < 0.9 else (1, 0, 0)
    return look_at_camera(pos, target, f, 800, 600, view_id=view_id, up=up)
