# tests/conftest.py
import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))

import pytest  # noqa: E402

from app import config, config_shared  # noqa: E402
from app.clocksim import (  # noqa: E402
    ChannelModel,
    ClockModel,
    ExperimentConfig,
    simulate_two_party,
)
from app.utils import config_utils, vault_client  # noqa: E402
from app.utils.config_utils import PS_PER_S  # noqa: E402

# Symmetric 1 µs channel: peaks 2 µs apart, well inside the fine window.
CHANNEL_DELAY_PS = 1_000_000
TRUE_OFFSET_PS = 12_345.0
SHORT_T_A_PS = 5 * PS_PER_S


def clear_config_caches() -> None:
    vault_client.get_config_value_cached.cache_clear()
    config_utils.get_config_bool.cache_clear()
    for module in (config, config_shared):
        for name in dir(module):
            getter = getattr(module, name)
            if name.startswith("get_") and hasattr(getter, "cache_clear"):
                getter.cache_clear()


@pytest.fixture(autouse=True)
def fresh_config():
    clear_config_caches()
    yield
    clear_config_caches()


@pytest.fixture(scope="session")
def short_experiment() -> ExperimentConfig:
    return ExperimentConfig(
        duration_ps=20 * PS_PER_S,
        seed=7,
        clock_b=ClockModel(b_ps=TRUE_OFFSET_PS),
        channel=ChannelModel.symmetric(CHANNEL_DELAY_PS),
    )


@pytest.fixture(scope="session")
def short_run(short_experiment):
    return simulate_two_party(short_experiment)
