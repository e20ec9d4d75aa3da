"""Exception families shared by all pairsync modules.

Modules raise their own subclasses; the command line maps the two families
to distinct exit codes (data problems vs. analysis failures).
"""


class PairSyncError(Exception):
    """Base class for every error raised deliberately by pairsync."""


class UsageError(PairSyncError):
    """Invalid command-line usage."""


class DataError(PairSyncError):
    """Malformed input data or a violated input invariant."""


class AnalysisError(PairSyncError):
    """Peak search, fit or tracking could not produce a result."""
