"""Wrapper around the standard logger that redacts payloads before logging.

Session settings and run manifests are logged through these helpers so that the
shared key never appears in clear text.
"""

import json
import logging
from typing import Any

from app.utils.config_utils import get_config_bool
from app.utils.redactor import redact_dict
from app.utils.setup_logger import setup_logger

logger: logging.Logger = setup_logger(
    "pairsync.safe", structured=get_config_bool("SAFE_LOG_STRUCTURED", False)
)


def _render(message: str, data: dict[str, Any] | None) -> str:
    if data is None:
        return message
    payload = json.dumps(redact_dict(data), sort_keys=True, default=str)
    return f"{message} | {payload}"


def safe_info(message: str, data: dict[str, Any] | None = None) -> None:
    """Log an info-level message with a redacted payload.

    Args:
        message (str): Human-readable log message.
        data (Optional[dict]): Payload to attach after redaction.

    """
    logger.info(_render(message, data))


def safe_warning(message: str, data: dict[str, Any] | None = None) -> None:
    """Log a warning-level message with a redacted payload."""
    logger.warning(_render(message, data))


def safe_error(message: str, data: dict[str, Any] | None = None) -> None:
    """Log an error-level message with a redacted payload."""
    logger.error(_render(message, data))


def safe_debug(message: str, data: dict[str, Any] | None = None) -> None:
    """Log a debug-level message with a redacted payload."""
    logger.debug(_render(message, data))
