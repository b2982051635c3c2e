import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from uavloc.pipeline import RunConfig, simulate
from uavloc.world_sim import CameraModel, TerrainKind, generate_world

settings.register_profile(
    "uavloc", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("uavloc")


@pytest.fixture(scope="session")
def camera():
    return CameraModel.nadir(256, focal=160.0)


@pytest.fixture(scope="session")
def crater_1024():
    return generate_world(7, TerrainKind.CRATER, 1024, 1024, 0.25)


@pytest.fixture(scope="session")
def gravel_512():
    return generate_world(3, TerrainKind.GRAVEL, 512, 512, 0.25)


def small_config(**kw):
    """Short straight flight over a 1024 px world; a few seconds end to end."""
    base = dict(
        width=1024,
        height=1024,
        waypoints=[[50.0, 128.0], [200.0, 128.0]],
        speed=10.0,
        max_frames=120,
    )
    base.update(kw)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    return simulate(small_config())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
