import numpy as np
import pytest

from megloc import build_sensor_helmet, build_synthetic_source_space, compute_lead_field


@pytest.fixture(scope="session")
def small_sensors():
    return build_sensor_helmet(24, 0.12)


@pytest.fixture(scope="session")
def small_space():
    return build_synthetic_source_space(40, 0.08, seed=7)


@pytest.fixture(scope="session")
def small_lead_field(small_sensors, small_space):
    return compute_lead_field(small_sensors, small_space)


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
