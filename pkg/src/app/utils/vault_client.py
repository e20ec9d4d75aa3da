"""Vault client for secret retrieval using AppRole authentication.

Used to resolve secrets such as the shared session key from the KV v2 engine.
Vault is only consulted when AppRole credentials are present; otherwise lookups
fall through to the environment.
"""

import os
from functools import lru_cache
from typing import Any

import hvac
from tenacity import retry, stop_after_attempt, wait_fixed

from app.utils.safe_logger import safe_info, safe_warning

VAULT_ADDR: str = os.getenv("VAULT_ADDR", "http://127.0.0.1:8200")
VAULT_ROLE_ID: str | None = os.getenv("VAULT_ROLE_ID")
VAULT_SECRET_ID: str | None = os.getenv("VAULT_SECRET_ID")
NODE_NAME: str = os.getenv("PAIRSYNC_NODE_NAME", "pairsync")
ENVIRONMENT: str = os.getenv("ENVIRONMENT", "dev")


def vault_enabled() -> bool:
    """Return True when AppRole credentials are configured."""
    return bool(VAULT_ROLE_ID and VAULT_SECRET_ID)


class VaultClient:
    """Authenticates against Vault with AppRole and reads node secrets."""

    def __init__(self) -> None:
        """Create the hvac client and authenticate.

        Raises:
            RuntimeError: If authentication returns no token.

        """
        self.client: hvac.Client = hvac.Client(url=VAULT_ADDR)
        self._authenticate()

    @retry(stop=stop_after_attempt(3), wait=wait_fixed(2))
    def _authenticate(self) -> None:
        try:
            response: dict[str, Any] = self.client.auth.approle.login(
                role_id=VAULT_ROLE_ID, secret_id=VAULT_SECRET_ID
            )
            if not response["auth"].get("client_token"):
                raise RuntimeError("❌ Failed to retrieve Vault token from response.")
            safe_info("🔐 Vault AppRole authentication successful.")
        except Exception as e:
            safe_warning("⚠️ Vault authentication failed.", data={"error": str(e)})
            raise

    @retry(stop=stop_after_attempt(3), wait=wait_fixed(2))
    def get(self, key: str, fallback: str | None = None) -> str | None:
        """Read `key` from `secret/<node>/<environment>`.

        Args:
            key (str): Secret key.
            fallback (Optional[str]): Returned when the key is absent or Vault fails.

        Returns:
            Optional[str]: The secret value or the fallback.

        """
        path = f"{NODE_NAME}/{ENVIRONMENT}"
        try:
            secret: dict[str, Any] = self.client.secrets.kv.v2.read_secret_version(path=path)
            value: Any | None = secret["data"]["data"].get(key)
            if value is not None:
                safe_info("🔑 Vault value retrieved.", data={"key": key})
                return str(value)
            safe_warning("⚠️ Vault key not found.", data={"key": key, "path": path})
        except Exception as e:
            safe_warning("⚠️ Vault read failure.", data={"key": key, "error": str(e)})
        return fallback


@lru_cache
def _vault() -> VaultClient:
    return VaultClient()


@lru_cache
def get_config_value_cached(key: str, default: str | None = None) -> str:
    """Resolve a configuration value from Vault, the environment, or a default.

    Args:
        key (str): The config key to look up.
        default (Optional[str]): Fallback if not found anywhere.

    Returns:
        str: The resolved value.

    Raises:
        ValueError: If no value is found and no default is provided.

    """
    env_value = os.getenv(key, default)
    val = _vault().get(key, fallback=env_value) if vault_enabled() else env_value
    if val is None:
        raise ValueError(f"❌ Missing required config value for key: {key}")
    return str(val)
