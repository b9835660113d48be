import logging
import pytest
from config.constants import DEFAULT_SYSTEM_CONFIG
from core.model import ProblemInstance
from core.scenario import SystemConfig, generate_instance
from instances import build_instance


@pytest.fixture
def logger():
    silent = logging.getLogger("JFCBD.tests")
    silent.addHandler(logging.NullHandler())
    silent.propagate = False
    return silent


@pytest.fixture
def make_instance():
    return build_instance


@pytest.fixture
def desk_config() -> SystemConfig:
    return SystemConfig.from_dict(DEFAULT_SYSTEM_CONFIG)


@pytest.fixture
def desk_instance(desk_config, logger) -> ProblemInstance:
    return generate_instance(desk_config, logger=logger)


@pytest.fixture
def sensing_active_instance() -> ProblemInstance:
    """Sensing target far above what the communication beams deliver (Γ̃_s = 80)."""
    return build_instance(seed=3, gamma_s=20.0)


@pytest.fixture
def sensing_inactive_instance() -> ProblemInstance:
    return build_instance(seed=3, gamma_s=0.0)
