"""Repo-specific configuration for pairsync.

Analysis defaults (block length, histogram geometry, peak shape, detection
threshold) and session defaults (host, port, shared key). Every getter can be
overridden through the environment or Vault.
"""

from functools import lru_cache

from app.config_shared import *  # noqa: F401,F403
from app.config_shared import get_config_value_cached
from app.utils.config_utils import parse_float, parse_int, seconds_to_ps
from app.utils.types import CoarseMethod


def _int(key: str, default: str) -> int:
    return parse_int(key, get_config_value_cached(key, default))


def _float(key: str, default: str) -> float:
    return parse_float(key, get_config_value_cached(key, default))


@lru_cache
def get_block_duration_ps() -> int:
    """Return the acquisition time T_a in ps (PAIRSYNC_TA_S, default 20 s)."""
    return seconds_to_ps(_float("PAIRSYNC_TA_S", "20"))


@lru_cache
def get_coarse_bin_ps() -> int:
    """Return the coarse correlation bin width in ps (default 2 µs)."""
    return _int("PAIRSYNC_COARSE_BIN_PS", "2000000")


@lru_cache
def get_fine_bin_ps() -> int:
    """Return the fine correlation bin width in ps (default 16 ps)."""
    return _int("PAIRSYNC_FINE_BIN_PS", "16")


@lru_cache
def get_fine_half_window_ps() -> int:
    """Return the half-width of the fine window around the coarse cluster (default 4 µs)."""
    return _int("PAIRSYNC_FINE_HALF_WINDOW_PS", "4000000")


@lru_cache
def get_coarse_range_ps() -> int:
    """Return the coarse ambiguity half-range in ps (default 1 ms)."""
    return _int("PAIRSYNC_COARSE_RANGE_PS", "1000000000")


@lru_cache
def get_coarse_method() -> CoarseMethod:
    """Return the coarse correlation method ('direct' or 'fft').

    Raises:
        ValueError: If the method is unknown.

    """
    raw = get_config_value_cached("PAIRSYNC_COARSE_METHOD", "direct").lower()
    try:
        return CoarseMethod(raw)
    except ValueError:
        raise ValueError(
            f"Invalid PAIRSYNC_COARSE_METHOD: '{raw}'. "
            f"Must be one of: {[m.value for m in CoarseMethod]}"
        )


@lru_cache
def get_peak_threshold_k() -> float:
    """Return the detection threshold in standard deviations above baseline (default 6)."""
    return _float("PAIRSYNC_PEAK_THRESHOLD_K", "6")


@lru_cache
def get_peak_shape_f() -> float:
    """Return the Lorentzian fraction of the timing response (default 0.2)."""
    return _float("PAIRSYNC_SHAPE_F", "0.2")


@lru_cache
def get_peak_shape_sigma_ps() -> float:
    """Return the timing response width σ in ps (default 290)."""
    return _float("PAIRSYNC_SHAPE_SIGMA_PS", "290")


@lru_cache
def get_fit_margin_fwhm() -> float:
    """Return the fit support margin beyond each peak, in FWHM units (default 10)."""
    return _float("PAIRSYNC_FIT_MARGIN_FWHM", "10")


@lru_cache
def get_track_workers() -> int:
    """Return the number of worker threads used for per-block tracking (default 1)."""
    return _int("PAIRSYNC_TRACK_WORKERS", "1")


@lru_cache
def get_listen_host() -> str:
    """Return the host the session server binds to (default 127.0.0.1)."""
    return get_config_value_cached("PAIRSYNC_HOST", "127.0.0.1")


@lru_cache
def get_port() -> int:
    """Return the session TCP port (default 7820)."""
    return _int("PAIRSYNC_PORT", "7820")


@lru_cache
def get_connect_attempts() -> int:
    """Return how many times `connect` retries before giving up (default 5)."""
    return _int("PAIRSYNC_CONNECT_ATTEMPTS", "5")


@lru_cache
def get_shared_key_hex() -> str:
    """Return the hex-encoded shared session key, or '' for an unkeyed session."""
    return get_config_value_cached("PAIRSYNC_KEY_HEX", "").strip()
