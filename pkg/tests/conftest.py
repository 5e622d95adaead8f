import pytest
from hypothesis import HealthCheck, settings

from glancer import scenarios as scen

settings.register_profile(
    "artifact",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("artifact")


@pytest.fixture(scope="session")
def half_plane():
    return scen.builtin("half_plane")


@pytest.fixture(scope="session")
def strip():
    return scen.builtin("strip")


@pytest.fixture(scope="session")
def disk():
    return scen.builtin("disk_interior")


@pytest.fixture(scope="session")
def exterior():
    return scen.builtin("disk_exterior")


@pytest.fixture(scope="session")
def annulus():
    return scen.builtin("annulus")
