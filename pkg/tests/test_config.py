import os
from unittest.mock import patch

import pytest

from app import config
from app.utils.types import CoarseMethod


@patch.dict(os.environ, {}, clear=True)
def test_analysis_defaults():
    assert config.get_block_duration_ps() == 20 * 10**12
    assert config.get_coarse_bin_ps() == 2_000_000
    assert config.get_fine_bin_ps() == 16
    assert config.get_fine_half_window_ps() == 4_000_000
    assert config.get_coarse_range_ps() == 10**9
    assert config.get_coarse_method() is CoarseMethod.DIRECT
    assert config.get_peak_threshold_k() == 6.0
    assert config.get_peak_shape_f() == 0.2
    assert config.get_peak_shape_sigma_ps() == 290.0
    assert config.get_fit_margin_fwhm() == 10.0
    assert config.get_track_workers() == 1


@patch.dict(os.environ, {}, clear=True)
def test_session_defaults():
    assert config.get_listen_host() == "127.0.0.1"
    assert config.get_port() == 7820
    assert config.get_connect_attempts() == 5
    assert config.get_shared_key_hex() == ""


@patch.dict(os.environ, {"PAIRSYNC_TA_S": "2.5", "PAIRSYNC_FINE_BIN_PS": "2e1"})
def test_values_from_env():
    assert config.get_block_duration_ps() == 2_500_000_000_000
    assert config.get_fine_bin_ps() == 20


@patch.dict(os.environ, {"PAIRSYNC_COARSE_METHOD": "FFT"})
def test_coarse_method_case_insensitive():
    assert config.get_coarse_method() is CoarseMethod.FFT


@patch.dict(os.environ, {"PAIRSYNC_COARSE_METHOD": "wavelet"})
def test_invalid_coarse_method():
    with pytest.raises(ValueError, match="PAIRSYNC_COARSE_METHOD"):
        config.get_coarse_method()


@patch.dict(os.environ, {"PAIRSYNC_FINE_BIN_PS": "16.5"})
def test_non_integral_bin_rejected():
    with pytest.raises(ValueError, match="PAIRSYNC_FINE_BIN_PS"):
        config.get_fine_bin_ps()


@patch.dict(os.environ, {"PAIRSYNC_KEY_HEX": "  abcd  "})
def test_shared_key_is_stripped():
    assert config.get_shared_key_hex() == "abcd"
