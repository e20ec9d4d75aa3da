"""Timestamp types, block segmentation and the PTAG binary tag-file format.

All times are signed 64-bit integer picoseconds since the session epoch. The
same `TagStream` value flows through the simulator, the correlator and the
wire protocol.

PTAG v1, little-endian::

    header  magic "PAIRSYNC" (8) | version u16 | party u8 | reserved u8 |
            record_count u64 | reserved u32                       -> 24 bytes
    record  time_ps i64 | channel u16 | flags u16 | reserved u32  -> 16 bytes
"""

import struct
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, BinaryIO

import numpy as np
import numpy.typing as npt

from app.utils.errors import DataError
from app.utils.setup_logger import setup_logger
from app.utils.types import Party

logger = setup_logger(__name__)

MAGIC = b"PAIRSYNC"
VERSION = 1
MAX_CHANNEL = 16
HEADER = struct.Struct("<8sHBBQI")
HEADER_SIZE = HEADER.size
RECORD_DTYPE = np.dtype(
    [("time_ps", "<i8"), ("channel", "<u2"), ("flags", "<u2"), ("reserved", "<u4")]
)
RECORD_SIZE = RECORD_DTYPE.itemsize

TimeArray = npt.NDArray[np.int64]


class BadMagic(DataError):
    """The source does not start with the PTAG magic."""


class BadVersion(DataError):
    """Unsupported PTAG version."""


class TruncatedRecord(DataError):
    """The source ends inside the header or a record."""


class NonMonotonic(DataError):
    """Tag times decrease."""


class InvalidTag(DataError):
    """A tag field is outside its allowed range."""


@dataclass(frozen=True)
class TimeTag:
    """One detection event on a local clock."""

    time_ps: int
    channel: int = 0
    flags: int = 0


def _frozen(array: npt.ArrayLike, dtype: type) -> npt.NDArray[Any]:
    out = np.array(array, dtype=dtype, copy=True).reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TagStream:
    """Time-ordered detection events of one party.

    Arrays are immutable after construction so a stream can be shared across
    threads. `epoch_info` is free-form metadata and takes no part in equality.
    """

    party: Party
    times: TimeArray
    channels: npt.NDArray[np.uint16]
    flags: npt.NDArray[np.uint16]
    epoch_info: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "party", Party(self.party))
        object.__setattr__(self, "times", _frozen(self.times, np.int64))
        object.__setattr__(self, "channels", _frozen(self.channels, np.uint16))
        object.__setattr__(self, "flags", _frozen(self.flags, np.uint16))
        n = len(self.times)
        if len(self.channels) != n or len(self.flags) != n:
            raise InvalidTag("times, channels and flags must have equal length")
        if n > 1 and np.any(np.diff(self.times) < 0):
            raise NonMonotonic("tag times must be non-decreasing")
        if n and int(self.channels.max()) >= MAX_CHANNEL:
            raise InvalidTag(f"channel ids must be < {MAX_CHANNEL}")

    @classmethod
    def from_times(
        cls,
        party: Party,
        times: npt.ArrayLike,
        channels: npt.ArrayLike | None = None,
        flags: npt.ArrayLike | None = None,
        epoch_info: dict[str, Any] | None = None,
    ) -> "TagStream":
        """Build a stream from a time array; channels and flags default to 0."""
        t = np.asarray(times, dtype=np.int64).reshape(-1)
        zeros = np.zeros(len(t), dtype=np.uint16)
        return cls(
            party=party,
            times=t,
            channels=zeros if channels is None else channels,
            flags=zeros if flags is None else flags,
            epoch_info=dict(epoch_info or {}),
        )

    @classmethod
    def from_tags(
        cls, party: Party, tags: list[TimeTag], epoch_info: dict[str, Any] | None = None
    ) -> "TagStream":
        """Build a stream from a list of `TimeTag`."""
        return cls.from_times(
            party,
            [t.time_ps for t in tags],
            [t.channel for t in tags],
            [t.flags for t in tags],
            epoch_info,
        )

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, c, f in zip(self.times.tolist(), self.channels.tolist(), self.flags.tolist()):
            yield TimeTag(t, c, f)

    def __getitem__(self, i: int) -> TimeTag:
        return TimeTag(int(self.times[i]), int(self.channels[i]), int(self.flags[i]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.party == other.party
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.flags, other.flags)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def tags(self) -> list[TimeTag]:
        """Return the stream as a list of `TimeTag`."""
        return list(self)

    def slice(self, start: int, stop: int) -> "TagStream":
        """Return records [start, stop) as a new stream sharing party and metadata."""
        return TagStream(
            party=self.party,
            times=self.times[start:stop],
            channels=self.channels[start:stop],
            flags=self.flags[start:stop],
            epoch_info=self.epoch_info,
        )

    def end_ps(self) -> int | None:
        """Return the declared stream end (exclusive), or None for an empty stream."""
        declared = self.epoch_info.get("duration_ps")
        if declared is not None:
            return int(declared)
        return int(self.times[-1]) + 1 if len(self) else None


@dataclass(frozen=True)
class Block:
    """Tags of one acquisition window [t_start_ps, t_end_ps)."""

    index: int
    t_start_ps: int
    t_end_ps: int
    tags: TagStream
    partial: bool = False

    @property
    def mid_ps(self) -> int:
        """Return the block midpoint."""
        return (self.t_start_ps + self.t_end_ps) // 2


def encode_stream(stream: TagStream, sink: BinaryIO) -> int:
    """Write `stream` to `sink` in PTAG v1 format.

    Args:
        stream (TagStream): Stream to encode.
        sink (BinaryIO): Writable binary sink.

    Returns:
        int: Number of bytes written (24 + 16 per tag).

    Raises:
        NonMonotonic: If the stream is not sorted.
        OSError: If the sink fails.

    """
    if len(stream) > 1 and np.any(np.diff(stream.times) < 0):
        raise NonMonotonic("refusing to encode an unsorted stream")

    records = np.zeros(len(stream), dtype=RECORD_DTYPE)
    records["time_ps"] = stream.times
    records["channel"] = stream.channels
    records["flags"] = stream.flags

    header = HEADER.pack(MAGIC, VERSION, int(stream.party), 0, len(stream), 0)
    body = records.tobytes()
    sink.write(header)
    sink.write(body)
    return len(header) + len(body)


def decode_stream(source: BinaryIO) -> TagStream:
    """Read a PTAG v1 stream.

    Args:
        source (BinaryIO): Readable binary source positioned at the header.

    Returns:
        TagStream: The decoded stream.

    Raises:
        BadMagic: If the magic bytes do not match.
        BadVersion: If the version is not 1.
        TruncatedRecord: If the data ends inside the header or a record.
        NonMonotonic: If record times decrease.

    """
    header = source.read(HEADER_SIZE)
    if header[: len(MAGIC)] != MAGIC[: len(header)] or not header:
        raise BadMagic("missing PAIRSYNC magic")
    if len(header) < HEADER_SIZE:
        raise TruncatedRecord(f"header truncated at {len(header)} bytes")

    magic, version, party, _, count, _ = HEADER.unpack(header)
    if magic != MAGIC:
        raise BadMagic("missing PAIRSYNC magic")
    if version != VERSION:
        raise BadVersion(f"unsupported PTAG version {version}")
    if party not in (Party.ALICE, Party.BOB):
        raise InvalidTag(f"unknown party byte {party}")

    body = source.read(count * RECORD_SIZE)
    if len(body) < count * RECORD_SIZE:
        raise TruncatedRecord(
            f"expected {count} records, data ends after {len(body) / RECORD_SIZE:.2f}"
        )
    if source.read(1):
        logger.warning("⚠️ Trailing bytes after %d PTAG records ignored", count)

    records = np.frombuffer(body, dtype=RECORD_DTYPE, count=count)
    if count > 1 and np.any(np.diff(records["time_ps"]) < 0):
        raise NonMonotonic("record times decrease")
    return TagStream(
        party=Party(party),
        times=records["time_ps"],
        channels=records["channel"],
        flags=records["flags"],
    )


def write_tag_file(path: str | Path, stream: TagStream) -> int:
    """Encode `stream` to a file and return the byte count."""
    with open(path, "wb") as sink:
        return encode_stream(stream, sink)


def read_tag_file(path: str | Path) -> TagStream:
    """Decode a PTAG file."""
    with open(path, "rb") as source:
        return decode_stream(source)


def split_blocks(stream: TagStream, t_a_ps: int, end_ps: int | None = None) -> list[Block]:
    """Segment a stream into half-open blocks of length `t_a_ps`.

    Block k covers [k·T_a, (k+1)·T_a). Every index between the first and the
    last occupied block is emitted, so concatenating the blocks reproduces the
    stream exactly. A block reaching past the stream end is flagged partial.

    Args:
        stream (TagStream): Stream to segment.
        t_a_ps (int): Block length in ps.
        end_ps (Optional[int]): Stream end; defaults to `stream.end_ps()`.

    Returns:
        list[Block]: Ordered, disjoint blocks.

    Raises:
        ValueError: If `t_a_ps` is not positive.

    """
    if t_a_ps <= 0:
        raise ValueError(f"block length must be positive, got {t_a_ps}")
    if not len(stream):
        return []

    end = end_ps if end_ps is not None else stream.end_ps()
    first = int(stream.times[0]) // t_a_ps
    last = int(stream.times[-1]) // t_a_ps
    starts = np.arange(first, last + 2, dtype=np.int64) * t_a_ps
    cuts = np.searchsorted(stream.times, starts, side="left")

    blocks = []
    for k, index in enumerate(range(first, last + 1)):
        t_start = int(starts[k])
        t_end = int(starts[k + 1])
        blocks.append(
            Block(
                index=index,
                t_start_ps=t_start,
                t_end_ps=t_end,
                tags=stream.slice(int(cuts[k]), int(cuts[k + 1])),
                partial=end is not None and t_end > end,
            )
        )
    return blocks


def quantize(stream: TagStream, step_ps: int) -> TagStream:
    """Floor every timestamp to a multiple of `step_ps` (tagger granularity)."""
    if step_ps <= 1:
        return stream
    return TagStream(
        party=stream.party,
        times=np.floor_divide(stream.times, step_ps) * step_ps,
        channels=stream.channels,
        flags=stream.flags,
        epoch_info=stream.epoch_info,
    )
