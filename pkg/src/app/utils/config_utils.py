"""Typed parsing helpers for configuration strings.

Environment and key/value config files deliver strings; these helpers turn
them into booleans, numbers and picosecond durations with clear errors.
"""

import os
from functools import lru_cache

PS_PER_S = 1_000_000_000_000

_TRUE_VALUES = ("1", "true", "yes", "on")


@lru_cache
def get_config_bool(key: str, default: bool = False) -> bool:
    """Retrieve a boolean configuration value from the environment.

    Args:
        key (str): The name of the environment variable.
        default (bool): The fallback value if the environment variable is not set.

    Returns:
        bool: The parsed boolean value.

    """
    val = os.getenv(key)
    if val is None:
        return default
    return parse_bool(val)


def parse_bool(value: str) -> bool:
    """Parse a truthy/falsy string."""
    return value.strip().lower() in _TRUE_VALUES


def parse_float(key: str, value: str) -> float:
    """Parse a float, naming the offending key on failure.

    Raises:
        ValueError: If `value` is not a number.

    """
    try:
        return float(value)
    except ValueError:
        raise ValueError(f"Invalid numeric value for {key}: {value!r}")


def parse_int(key: str, value: str) -> int:
    """Parse an integer; accepts float notation such as ``2e6`` when integral.

    Raises:
        ValueError: If `value` is not an integral number.

    """
    number = parse_float(key, value)
    if not number.is_integer():
        raise ValueError(f"Expected an integer for {key}: {value!r}")
    return int(number)


def seconds_to_ps(seconds: float) -> int:
    """Convert seconds to integer picoseconds (rounded)."""
    return int(round(seconds * PS_PER_S))
