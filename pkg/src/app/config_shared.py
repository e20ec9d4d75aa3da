"""Shared configuration getters.

Provides typed, cached getter functions that resolve configuration values from
Vault, then environment variables, then defaults.
"""

from functools import lru_cache

from app.utils.config_utils import get_config_bool, parse_bool
from app.utils.vault_client import get_config_value_cached

__all__ = [
    "get_config_bool",
    "get_config_value_cached",
    "get_environment",
    "get_log_level",
    "get_log_format",
    "get_metrics_enabled",
    "get_metrics_port",
]


@lru_cache
def get_environment() -> str:
    """Retrieve the runtime environment.

    Returns:
        str: The environment name (e.g., 'dev', 'lab', 'prod').

    Defaults to 'dev' if not set.

    """
    return get_config_value_cached("ENVIRONMENT", "dev")


@lru_cache
def get_log_level() -> str:
    """Retrieve the log level name. Defaults to 'INFO'."""
    return get_config_value_cached("LOG_LEVEL", "INFO").upper()


@lru_cache
def get_log_format() -> str:
    """Retrieve the log format ('text' or 'json'). Defaults to 'text'."""
    return get_config_value_cached("LOG_FORMAT", "text").lower()


@lru_cache
def get_metrics_enabled() -> bool:
    """Whether the Prometheus metrics server is started. Defaults to False."""
    return parse_bool(get_config_value_cached("METRICS_ENABLED", "false"))


@lru_cache
def get_metrics_port() -> int:
    """Retrieve the metrics server port.

    Returns:
        int: Port number.

    Raises:
        ValueError: If METRICS_PORT is not an integer.

    Defaults to 8000 if not set.

    """
    raw = get_config_value_cached("METRICS_PORT", "8000")
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"Invalid METRICS_PORT value: {raw}")
