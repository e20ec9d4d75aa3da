"""Process entry point for the `pairsync` console script.

Initializes logging and hands the argument vector to the command dispatcher.
"""

import sys
import traceback

from app import config_shared
from app.cli import dispatch
from app.utils.setup_logger import setup_logger

logger = setup_logger(__name__)


def main() -> None:
    """Run one pairsync command and exit with its status code."""
    logger.debug(
        "🚀 pairsync starting in %s environment (log level %s, format %s)",
        config_shared.get_environment(),
        config_shared.get_log_level(),
        config_shared.get_log_format(),
    )
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    try:
        main()
    except Exception as e:
        logger.exception("❌ Unhandled exception: %s", e)
        traceback.print_exc()
        sys.exit(1)
