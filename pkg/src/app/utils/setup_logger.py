"""Configures and returns a logger with console, optional file, and optional JSON output.

Console output goes to standard error by default; command output stays on
standard output. Level, format and stream come from LOG_LEVEL,
LOG_FORMAT and LOG_STREAM.
"""

import logging
import os
import sys
from logging import Logger
from logging.handlers import RotatingFileHandler

try:
    from pythonjsonlogger.json import JsonFormatter
except ImportError:
    JsonFormatter = None  # JSON logging fallback


def setup_logger(
    name: str | None = None,
    level: int | None = None,
    structured: bool | None = None,
    log_file: str | None = None,
) -> Logger:
    """Configure and return a logger with optional structured and file output.

    Args:
        name (Optional[str]): Logger name.
        level (Optional[int]): Logging level (overrides LOG_LEVEL).
        structured (Optional[bool]): Use JSON logging (overrides LOG_FORMAT).
        log_file (Optional[str]): Path to a log file (overrides LOG_FILE, enables rotation).

    Returns:
        Logger: Configured logger instance.

    """
    logger = logging.getLogger(name or "pairsync")

    if logger.hasHandlers():
        return logger

    level_name = os.getenv("LOG_LEVEL", "INFO").upper()
    resolved_level: int = level if level is not None else getattr(logging, level_name, logging.INFO)

    structured = (
        structured if structured is not None else os.getenv("LOG_FORMAT", "text").lower() == "json"
    )
    log_file = log_file or os.getenv("LOG_FILE") or None

    if structured and JsonFormatter:
        formatter: logging.Formatter = JsonFormatter(
            "%(asctime)s %(levelname)s %(name)s %(message)s"
        )
    else:
        formatter = logging.Formatter(
            fmt="%(asctime)s [%(levelname)s] %(name)s - %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
        )

    stream = sys.stdout if os.getenv("LOG_STREAM", "stderr").lower() == "stdout" else sys.stderr
    stream_handler = logging.StreamHandler(stream)
    stream_handler.setFormatter(formatter)
    logger.addHandler(stream_handler)

    if log_file:
        file_handler = RotatingFileHandler(log_file, maxBytes=5 * 1024 * 1024, backupCount=3)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    logger.setLevel(resolved_level)
    logger.propagate = False

    if structured and not JsonFormatter:
        logger.warning("⚠️ Structured logging requested but python-json-logger is missing.")

    return logger
