"""Initialize the `utils` package for shared pairsync utilities.

Included Utilities:
- setup_logger: Configures logging with plain or structured (JSON) output.
- errors: Exception families mapped to CLI exit codes.
- types: Shared enums (parties, frame types, exit codes) and typed payloads.
- vault_client / config_utils: Vault → environment → default value lookup.
- redactor / safe_logger: Redaction of key material before logging.
- metrics / metrics_server: Prometheus counters and their HTTP exporter.
"""

from .errors import AnalysisError, DataError, PairSyncError, UsageError
from .setup_logger import setup_logger

__all__ = [
    "setup_logger",
    "PairSyncError",
    "UsageError",
    "DataError",
    "AnalysisError",
]

# Initialize package-level logger for utilities
logger = setup_logger(name="utils")
