import os
from unittest.mock import MagicMock, patch

import pytest

from app.utils import vault_client
from app.utils.vault_client import get_config_value_cached


@patch.dict(os.environ, {"TEST_SECRET": "secret_value"})
def test_get_config_value_cached_returns_env():
    value = get_config_value_cached("TEST_SECRET")
    assert value == "secret_value"


@patch.dict(os.environ, {}, clear=True)
def test_get_config_value_cached_uses_default():
    value = get_config_value_cached("MISSING_KEY", default="default")
    assert value == "default"


@patch.dict(os.environ, {}, clear=True)
def test_missing_value_without_default():
    with pytest.raises(ValueError, match="MISSING_KEY"):
        get_config_value_cached("MISSING_KEY")


@patch.dict(os.environ, {"PAIRSYNC_KEY_HEX": "from-env"})
def test_vault_value_wins_when_enabled():
    client = MagicMock()
    client.get.return_value = "from-vault"
    with (
        patch.object(vault_client, "vault_enabled", return_value=True),
        patch.object(vault_client, "_vault", return_value=client),
    ):
        assert get_config_value_cached("PAIRSYNC_KEY_HEX") == "from-vault"
    client.get.assert_called_once_with("PAIRSYNC_KEY_HEX", fallback="from-env")


def test_vault_get_falls_back_on_missing_key():
    with patch.object(vault_client.VaultClient, "_authenticate"):
        client = vault_client.VaultClient()
    client.client = MagicMock()
    client.client.secrets.kv.v2.read_secret_version.return_value = {"data": {"data": {}}}
    assert client.get("PAIRSYNC_KEY_HEX", fallback="abc") == "abc"
