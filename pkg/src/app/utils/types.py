"""Shared enums and typed payloads used across pairsync.

Parties, wire frame types, jitter modes and CLI exit codes live here so the
simulator, the correlator, the wire protocol and the command line agree on a
single definition.
"""

from enum import Enum, IntEnum
from typing import Any, TypedDict


class Party(IntEnum):
    """The two synchronizing parties. Values are the PTAG header party byte."""

    ALICE = 0
    BOB = 1

    @property
    def peer(self) -> "Party":
        """Return the other party."""
        return Party.BOB if self is Party.ALICE else Party.ALICE


class FrameType(IntEnum):
    """Frame types of the classical exchange channel."""

    HELLO = 1
    BLOCK = 2
    ESTIMATE = 3
    BYE = 4


class JitterMode(str, Enum):
    """How detection jitter is applied by the simulator."""

    PAIR = "pair"
    DETECTOR = "detector"


class CoarseMethod(str, Enum):
    """Coarse-stage correlation method."""

    DIRECT = "direct"
    FFT = "fft"


class ExitCode(IntEnum):
    """Process exit codes of the command line."""

    OK = 0
    USAGE = 1
    DATA = 2
    ANALYSIS = 3


class RunManifest(TypedDict):
    """Everything needed to reproduce a CLI run."""

    command: str
    argv: list[str]
    config_path: str | None
    seed: int | None
    outputs: list[str]
    versions: dict[str, str]
    settings: dict[str, Any]


class SegmentRow(TypedDict):
    """Per channel-segment summary emitted by attack reports."""

    label: str
    t_start_s: float
    t_end_s: float
    blocks: int
    mean_delta_ps: float
    stderr_delta_ps: float
    mean_round_trip_ps: float
    asymmetry_bias_ps: float
