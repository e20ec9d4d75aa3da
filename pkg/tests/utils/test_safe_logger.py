import logging

from app.utils import safe_logger
from app.utils.redactor import REDACTED


def test_render_without_payload():
    assert safe_logger._render("hello", None) == "hello"


def test_render_redacts_payload():
    text = safe_logger._render("session", {"shared_key": "00ff", "port": 1})
    assert text == f'session | {{"port": 1, "shared_key": "{REDACTED}"}}'


def test_levels(monkeypatch):
    seen = []

    def capture(level):
        return lambda msg: seen.append((level, msg))

    for level in ("info", "warning", "error", "debug"):
        monkeypatch.setattr(safe_logger.logger, level, capture(level))
    safe_logger.safe_info("a")
    safe_logger.safe_warning("b", {"secret": "x"})
    safe_logger.safe_error("c")
    safe_logger.safe_debug("d")
    assert [lvl for lvl, _ in seen] == ["info", "warning", "error", "debug"]
    assert "x" not in seen[1][1]


def test_logger_does_not_propagate():
    assert isinstance(safe_logger.logger, logging.Logger)
    assert safe_logger.logger.propagate is False
