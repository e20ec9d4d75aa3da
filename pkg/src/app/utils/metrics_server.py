"""Prometheus metrics server starter for long-running sessions.

The `serve` and `connect` commands call this so a live synchronization session
can be scraped. The port and enablement flag are controlled via environment
variables:
- METRICS_ENABLED (default: "false")
- METRICS_PORT (default: "8000")
"""

from prometheus_client import start_http_server

from app import config_shared
from app.utils.setup_logger import setup_logger

logger = setup_logger(__name__)


def start_metrics_server() -> bool:
    """Conditionally start the Prometheus metrics HTTP server.

    Returns:
        bool: True if the server was started.

    Raises:
        ValueError: If METRICS_PORT is not a valid integer.

    """
    if not config_shared.get_metrics_enabled():
        return False

    port = config_shared.get_metrics_port()
    start_http_server(port)
    logger.info("📈 Metrics server listening on port %d", port)
    return True
