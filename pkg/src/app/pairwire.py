"""Classical exchange channel between the two parties.

Each side streams its raw local timestamps block by block to the peer over TCP.
Once a side holds both parties' tags for a block it runs the same block
pipeline as offline tracking, so live and offline results agree exactly.

Frame layout (little-endian)::

    length u32 | type u8 | payload | tag[32] (keyed sessions only)

`length` counts every byte after itself. The tag is HMAC-SHA256 over
type‖payload.
"""

from __future__ import annotations

import asyncio
import hashlib
import hmac
import struct
from collections.abc import Callable
from contextlib import suppress
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
import numpy.typing as npt
from tenacity import AsyncRetrying, retry_if_exception_type, stop_after_attempt, wait_exponential

from app import config
from app.peakfit import PeakShape, SyncEstimate
from app.syncpipe import SyncSeries, complete_blocks, process_block
from app.tags import TagStream
from app.utils.errors import DataError, PairSyncError, UsageError
from app.utils.metrics import record_auth_failure, record_frame_metrics, record_late_frame
from app.utils.safe_logger import safe_info
from app.utils.setup_logger import setup_logger
from app.utils.types import FrameType, Party
from app.xcorr import LocateSettings

logger = setup_logger(__name__)

MAX_PAYLOAD = 1 << 24
TAG_SIZE = 32
KEY_SIZE = 32
LENGTH = struct.Struct("<I")
HELLO = struct.Struct("<BBHqdd")
BLOCK_HEAD = struct.Struct("<II")
ESTIMATE = struct.Struct("<IIddd")


class WireError(DataError):
    """Base class for classical-channel failures."""


class BadLength(WireError):
    """Length field or payload size is inconsistent."""


class BadType(WireError):
    """Unknown or unexpected frame type."""


class AuthFail(WireError):
    """Authentication tag missing or wrong."""


class Truncated(WireError):
    """Data ends inside a frame."""


class ParameterMismatch(WireError):
    """Peers disagree on session parameters."""


class InvalidKey(UsageError):
    """Shared key is not 32 bytes of hex."""


@dataclass(frozen=True)
class Frame:
    """One frame of the exchange channel; `tag` is set on keyed decode."""

    type: FrameType
    payload: bytes = b""
    tag: bytes | None = None


@dataclass(frozen=True)
class HelloInfo:
    """Session parameters announced in HELLO."""

    role: Party
    keyed: bool
    t_a_ps: int
    f: float
    sigma_ps: float


@dataclass(frozen=True)
class SessionConfig:
    """Parameters of one side of a session."""

    role: Party
    t_a_ps: int
    shape: PeakShape = field(default_factory=PeakShape)
    shared_key: bytes | None = None
    host: str = "127.0.0.1"
    port: int = 7820
    connect_attempts: int = 5
    settings: LocateSettings | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", Party(self.role))
        if self.shared_key is not None and len(self.shared_key) != KEY_SIZE:
            raise InvalidKey(f"shared key must be {KEY_SIZE} bytes, got {len(self.shared_key)}")
        if self.t_a_ps <= 0:
            raise UsageError("block length must be positive")

    @classmethod
    def from_config(
        cls, role: Party, t_a_ps: int | None = None, key_hex: str | None = None, **overrides: Any
    ) -> SessionConfig:
        """Build a config from PAIRSYNC_* settings; explicit arguments win."""
        raw = config.get_shared_key_hex() if key_hex is None else key_hex.strip()
        return cls(
            role=role,
            t_a_ps=t_a_ps or config.get_block_duration_ps(),
            shape=overrides.pop("shape", None) or PeakShape.from_config(),
            shared_key=parse_key_hex(raw),
            host=overrides.pop("host", None) or config.get_listen_host(),
            port=overrides.pop("port", None) or config.get_port(),
            connect_attempts=config.get_connect_attempts(),
            **overrides,
        )

    @property
    def keyed(self) -> bool:
        return self.shared_key is not None

    def locate_settings(self) -> LocateSettings:
        """Peak search settings, identical to offline tracking with this shape."""
        return self.settings or replace(LocateSettings.from_config(), shape=self.shape)

    def to_log_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.name,
            "t_a_ps": self.t_a_ps,
            "f": self.shape.f,
            "sigma_ps": self.shape.sigma_ps,
            "host": self.host,
            "port": self.port,
            "shared_key": self.shared_key.hex() if self.shared_key else None,
        }


def parse_key_hex(raw: str) -> bytes | None:
    """Decode a hex key; empty means unkeyed.

    Raises:
        InvalidKey: If the value is not 64 hex digits.

    """
    if not raw:
        return None
    try:
        key = bytes.fromhex(raw)
    except ValueError:
        raise InvalidKey("shared key is not valid hex")
    if len(key) != KEY_SIZE:
        raise InvalidKey(f"shared key must be {KEY_SIZE} bytes, got {len(key)}")
    return key


def _mac(key: bytes, body: bytes) -> bytes:
    return hmac.new(key, body, hashlib.sha256).digest()


def encode_frame(frame: Frame, key: bytes | None = None) -> bytes:
    """Serialize `frame`, appending an HMAC tag when `key` is given.

    Raises:
        BadLength: If the payload exceeds 2²⁴ bytes.

    """
    if len(frame.payload) > MAX_PAYLOAD:
        raise BadLength(f"payload of {len(frame.payload)} bytes exceeds {MAX_PAYLOAD}")
    body = bytes([int(frame.type)]) + frame.payload
    tag = _mac(key, body) if key is not None else b""
    return LENGTH.pack(len(body) + len(tag)) + body + tag


def _check_length(length: int, key: bytes | None) -> None:
    overhead = 1 + (TAG_SIZE if key is not None else 0)
    if key is not None and 1 <= length < overhead:
        raise AuthFail("frame carries no authentication tag")
    if length < overhead or length > overhead + MAX_PAYLOAD:
        raise BadLength(f"invalid frame length {length}")


def _parse_body(body: bytes, key: bytes | None) -> Frame:
    tag = None
    if key is not None:
        body, tag = body[:-TAG_SIZE], body[-TAG_SIZE:]
        if not hmac.compare_digest(tag, _mac(key, body)):
            raise AuthFail("frame failed authentication")
    try:
        frame_type = FrameType(body[0])
    except ValueError:
        raise BadType(f"unknown frame type {body[0]}")
    return Frame(frame_type, body[1:], tag)


def decode_frame(data: bytes, key: bytes | None = None) -> Frame:
    """Parse exactly one frame.

    Raises:
        Truncated: If `data` ends inside the frame.
        BadLength: If the length field is invalid or bytes trail the frame.
        BadType: If the type byte is unknown.
        AuthFail: If the tag is missing or does not verify.

    """
    if len(data) < LENGTH.size:
        raise Truncated("frame shorter than its length field")
    (length,) = LENGTH.unpack_from(data)
    _check_length(length, key)
    if len(data) < LENGTH.size + length:
        raise Truncated(f"frame declares {length} bytes, {len(data) - LENGTH.size} present")
    if len(data) > LENGTH.size + length:
        raise BadLength("trailing bytes after frame")
    return _parse_body(data[LENGTH.size :], key)


def iter_frames(data: bytes, key: bytes | None = None) -> list[Frame]:
    """Split a recorded byte stream into frames.

    Raises:
        Truncated: If the data ends inside a frame.

    """
    frames = []
    pos = 0
    while pos < len(data):
        if len(data) - pos < LENGTH.size:
            raise Truncated("transcript ends inside a length field")
        (length,) = LENGTH.unpack_from(data, pos)
        end = pos + LENGTH.size + length
        frames.append(decode_frame(data[pos:end], key))
        pos = end
    return frames


# -----------------------------
# Payloads
# -----------------------------
def hello_frame(cfg: SessionConfig) -> Frame:
    """HELLO announcing role, keying, block length and peak shape."""
    payload = HELLO.pack(
        int(cfg.role), int(cfg.keyed), 0, cfg.t_a_ps, cfg.shape.f, cfg.shape.sigma_ps
    )
    return Frame(FrameType.HELLO, payload)


def parse_hello(payload: bytes) -> HelloInfo:
    """Decode a HELLO payload.

    Raises:
        BadLength: If the payload is not 28 bytes.

    """
    if len(payload) != HELLO.size:
        raise BadLength(f"HELLO payload must be {HELLO.size} bytes, got {len(payload)}")
    role, keyed, _, t_a_ps, f, sigma = HELLO.unpack(payload)
    if role not in (Party.ALICE, Party.BOB):
        raise ParameterMismatch(f"unknown peer role {role}")
    return HelloInfo(Party(role), bool(keyed), t_a_ps, f, sigma)


def block_frame(index: int, times: npt.ArrayLike) -> Frame:
    """BLOCK carrying one block of local timestamps."""
    t = np.asarray(times, dtype="<i8")
    return Frame(FrameType.BLOCK, BLOCK_HEAD.pack(index, len(t)) + t.tobytes())


def parse_block(payload: bytes) -> tuple[int, npt.NDArray[np.int64]]:
    """Decode a BLOCK payload into (index, times).

    Raises:
        BadLength: If the record count disagrees with the payload size.

    """
    if len(payload) < BLOCK_HEAD.size:
        raise BadLength("BLOCK payload shorter than its header")
    index, count = BLOCK_HEAD.unpack_from(payload)
    if len(payload) != BLOCK_HEAD.size + 8 * count:
        raise BadLength(f"BLOCK declares {count} tags in {len(payload)} bytes")
    times = np.frombuffer(payload, dtype="<i8", count=count, offset=BLOCK_HEAD.size)
    return index, times.astype(np.int64)


def estimate_frame(estimate: SyncEstimate) -> Frame:
    """ESTIMATE reporting one block result."""
    payload = ESTIMATE.pack(
        estimate.block_index,
        0,
        estimate.delta_ps,
        estimate.round_trip_ps,
        estimate.sigma_delta_ps,
    )
    return Frame(FrameType.ESTIMATE, payload)


def parse_estimate(payload: bytes, t_a_ps: int) -> SyncEstimate:
    """Decode an ESTIMATE payload.

    Raises:
        BadLength: If the payload is not 32 bytes.

    """
    if len(payload) != ESTIMATE.size:
        raise BadLength(f"ESTIMATE payload must be {ESTIMATE.size} bytes, got {len(payload)}")
    index, _, delta, trip, sigma = ESTIMATE.unpack(payload)
    return SyncEstimate(delta, trip, sigma, index, index * t_a_ps + t_a_ps // 2)


def check_hello(cfg: SessionConfig, peer: HelloInfo) -> None:
    """Reject a peer whose parameters differ from ours.

    Raises:
        ParameterMismatch: On role, keying, block length or shape mismatch.

    """
    problems = []
    if peer.role is not cfg.role.peer:
        problems.append(f"peer role {peer.role.name}, expected {cfg.role.peer.name}")
    if peer.keyed != cfg.keyed:
        problems.append("peer keying differs (both sides must agree on a shared key)")
    if peer.t_a_ps != cfg.t_a_ps:
        problems.append(f"T_a {peer.t_a_ps} ps vs {cfg.t_a_ps} ps")
    if (peer.f, peer.sigma_ps) != (cfg.shape.f, cfg.shape.sigma_ps):
        ours = (cfg.shape.f, cfg.shape.sigma_ps)
        problems.append(f"shape {(peer.f, peer.sigma_ps)} vs {ours}")
    if problems:
        raise ParameterMismatch("; ".join(problems))


# -----------------------------
# Session
# -----------------------------
@dataclass(frozen=True, eq=False)
class SessionResult:
    """Outcome of one session from one side's point of view.

    `series` holds this side's reported offsets (Bob's are negated), and
    `peer_stream` the peer's tags as received.
    """

    role: Party
    series: SyncSeries
    peer_estimates: dict[int, SyncEstimate]
    peer_stream: TagStream
    late_frames: int
    peer_completed: bool


async def read_frame(reader: asyncio.StreamReader, key: bytes | None) -> Frame | None:
    """Read one frame; None on a clean end of stream.

    Raises:
        Truncated: If the stream ends inside a frame.

    """
    try:
        head = await reader.readexactly(LENGTH.size)
    except asyncio.IncompleteReadError as exc:
        if exc.partial:
            raise Truncated("stream ends inside a length field")
        return None
    (length,) = LENGTH.unpack(head)
    _check_length(length, key)
    try:
        body = await reader.readexactly(length)
    except asyncio.IncompleteReadError:
        raise Truncated(f"stream ends inside a {length}-byte frame")
    return _parse_body(body, key)


class _Session:
    def __init__(
        self,
        cfg: SessionConfig,
        stream: TagStream,
        reader: asyncio.StreamReader,
        writer: asyncio.StreamWriter,
    ) -> None:
        self.cfg = cfg
        self.key = cfg.shared_key
        self.reader = reader
        self.writer = writer
        self.settings = cfg.locate_settings()
        self.local = {k: blk.tags.times for k, blk in complete_blocks(stream, cfg.t_a_ps).items()}
        self.peer: dict[int, npt.NDArray[np.int64]] = {}
        self.peer_estimates: dict[int, SyncEstimate] = {}
        self.estimates: dict[int, SyncEstimate] = {}
        self.failures: dict[int, str] = {}
        self.finalized = -1
        self.watermark = -1
        self.peer_done = False
        self.peer_closed = False
        self.late = 0
        self.send_ok = True
        self.lock = asyncio.Lock()
        self.progress = asyncio.Condition()

    async def send(self, frame: Frame) -> None:
        if not self.send_ok:
            return
        data = encode_frame(frame, self.key)
        try:
            async with self.lock:
                self.writer.write(data)
                await self.writer.drain()
        except ConnectionError as exc:
            self.send_ok = False
            logger.warning("⚠️ Peer stopped accepting frames: %s", exc)
            return
        record_frame_metrics("sent", frame.type.name)

    async def handshake(self) -> None:
        await self.send(hello_frame(self.cfg))
        frame = await read_frame(self.reader, self.key)
        if frame is None:
            raise Truncated("peer closed before HELLO")
        record_frame_metrics("received", frame.type.name)
        if frame.type is not FrameType.HELLO:
            raise BadType(f"expected HELLO, got {frame.type.name}")
        if len(frame.payload) >= 2 and bool(frame.payload[1]) != self.cfg.keyed:
            raise ParameterMismatch("peer keying differs (both sides must agree on a shared key)")
        check_hello(self.cfg, parse_hello(frame.payload))

    async def sender(self) -> None:
        for k in sorted(self.local):
            await self.send(block_frame(k, self.local[k]))
        await self.send(Frame(FrameType.BYE))

    async def receiver(self) -> None:
        try:
            while True:
                try:
                    frame = await read_frame(self.reader, self.key)
                except AuthFail:
                    record_auth_failure()
                    raise
                except (ConnectionError, Truncated) as exc:
                    logger.warning("⚠️ Peer connection lost: %s", exc)
                    return
                if frame is None:
                    return
                record_frame_metrics("received", frame.type.name)
                await self.on_frame(frame)
        finally:
            async with self.progress:
                self.peer_closed = True
                self.progress.notify_all()

    async def on_frame(self, frame: Frame) -> None:
        if frame.type is FrameType.BLOCK:
            index, times = parse_block(frame.payload)
            async with self.progress:
                if index <= self.finalized or index in self.peer:
                    self.late += 1
                    record_late_frame()
                    logger.warning("⚠️ Late BLOCK %d dropped", index)
                    return
                self.peer[index] = times
                self.watermark = max(self.watermark, index)
                self.progress.notify_all()
        elif frame.type is FrameType.ESTIMATE:
            est = parse_estimate(frame.payload, self.cfg.t_a_ps)
            self.peer_estimates[est.block_index] = est
            self.cross_check(est.block_index)
        elif frame.type is FrameType.BYE:
            async with self.progress:
                self.peer_done = True
                self.progress.notify_all()
        else:
            raise BadType(f"unexpected {frame.type.name} during session")

    def cross_check(self, index: int) -> None:
        own = self.estimates.get(index)
        peer = self.peer_estimates.get(index)
        if own is not None and peer is not None and peer.delta_ps != -own.delta_ps:
            logger.warning(
                "⚠️ Block %d: peer reports %.3f ps, expected %.3f ps",
                index,
                peer.delta_ps,
                -own.delta_ps,
            )

    def next_ready(self) -> int | None:
        pending = [k for k in set(self.local) | set(self.peer) if k > self.finalized]
        if not pending:
            return None
        k = min(pending)
        if self.peer_done or self.peer_closed or self.watermark > k:
            return k
        return None

    def compute(self, k: int) -> SyncEstimate:
        if self.cfg.role is Party.ALICE:
            return process_block(
                self.local[k], self.peer[k], k, self.cfg.t_a_ps, self.cfg.shape, self.settings
            )
        canonical = process_block(
            self.peer[k], self.local[k], k, self.cfg.t_a_ps, self.cfg.shape, self.settings
        )
        return canonical.negated()

    async def processor(self) -> None:
        loop = asyncio.get_running_loop()
        while True:
            async with self.progress:
                await self.progress.wait_for(
                    lambda: self.next_ready() is not None or self.peer_done or self.peer_closed
                )
                k = self.next_ready()
                if k is None:
                    if self.peer_done or self.peer_closed:
                        return
                    continue
            if k in self.local and k in self.peer:
                try:
                    est = await loop.run_in_executor(None, self.compute, k)
                except PairSyncError as exc:
                    self.failures[k] = type(exc).__name__
                    logger.warning("⚠️ Block %d failed: %s: %s", k, type(exc).__name__, exc)
                else:
                    self.estimates[k] = est
                    await self.send(estimate_frame(est))
                    self.cross_check(k)
            else:
                self.failures[k] = "MissingBlock"
            async with self.progress:
                self.finalized = k

    def result(self) -> SessionResult:
        indices = sorted(self.estimates)
        series = SyncSeries(
            estimates=tuple(self.estimates[k] for k in indices),
            t_a_ps=self.cfg.t_a_ps,
            gaps=tuple(sorted(self.failures)),
            failures=dict(sorted(self.failures.items())),
        )
        peer_times = (
            np.concatenate([self.peer[k] for k in sorted(self.peer)])
            if self.peer
            else np.empty(0, dtype=np.int64)
        )
        return SessionResult(
            role=self.cfg.role,
            series=series,
            peer_estimates=dict(sorted(self.peer_estimates.items())),
            peer_stream=TagStream.from_times(self.cfg.role.peer, peer_times),
            late_frames=self.late,
            peer_completed=self.peer_done,
        )

    async def run(self) -> SessionResult:
        try:
            await self.handshake()
            sender = asyncio.create_task(self.sender())
            processor = asyncio.create_task(self.processor())
            receiver = asyncio.create_task(self.receiver())
            tasks = [sender, processor, receiver]
            try:
                while not (sender.done() and processor.done()):
                    done, _ = await asyncio.wait(
                        [t for t in tasks if not t.done()], return_when=asyncio.FIRST_COMPLETED
                    )
                    for task in done:
                        exc = task.exception()
                        if exc is not None:
                            raise exc
                if self.writer.can_write_eof() and self.send_ok:
                    with suppress(ConnectionError, OSError):
                        self.writer.write_eof()
                await receiver
            finally:
                for task in tasks:
                    task.cancel()
        finally:
            self.writer.close()
            with suppress(ConnectionError, OSError):
                await self.writer.wait_closed()
        result = self.result()
        logger.info(
            "✅ Session finished as %s: %d estimates, %d gaps, %d late frames",
            self.cfg.role.name,
            len(result.series),
            len(result.series.gaps),
            result.late_frames,
        )
        return result


async def run_session(
    cfg: SessionConfig,
    stream: TagStream,
    reader: asyncio.StreamReader,
    writer: asyncio.StreamWriter,
) -> SessionResult:
    """Run one session over an established byte stream.

    Args:
        cfg (SessionConfig): Local parameters.
        stream (TagStream): Local tags.
        reader (asyncio.StreamReader): Incoming bytes from the peer.
        writer (asyncio.StreamWriter): Outgoing bytes to the peer.

    Returns:
        SessionResult: Reported series, peer estimates and the received peer stream.

    Raises:
        ParameterMismatch: If HELLO parameters disagree.
        AuthFail: If any frame fails authentication; the session is aborted.

    """
    safe_info("🤝 Starting session", cfg.to_log_dict())
    return await _Session(cfg, stream, reader, writer).run()


async def serve_session(
    cfg: SessionConfig,
    stream: TagStream,
    on_listening: Callable[[int], None] | None = None,
) -> SessionResult:
    """Listen on cfg.host:cfg.port, accept one peer and run the session.

    `on_listening` receives the bound port (useful with port 0).
    """
    loop = asyncio.get_running_loop()
    accepted: asyncio.Future[tuple[asyncio.StreamReader, asyncio.StreamWriter]] = (
        loop.create_future()
    )

    async def on_connect(reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        if accepted.done():
            logger.warning("⚠️ Rejecting extra connection; one peer per session")
            writer.close()
            return
        accepted.set_result((reader, writer))

    server = await asyncio.start_server(on_connect, cfg.host, cfg.port)
    port = server.sockets[0].getsockname()[1]
    logger.info("📡 Listening for peer on %s:%d", cfg.host, port)
    if on_listening is not None:
        on_listening(port)
    try:
        reader, writer = await accepted
    finally:
        server.close()
    try:
        return await run_session(cfg, stream, reader, writer)
    finally:
        with suppress(Exception):
            await server.wait_closed()


async def _open_connection(
    host: str, port: int, attempts: int
) -> tuple[asyncio.StreamReader, asyncio.StreamWriter]:
    async for attempt in AsyncRetrying(
        stop=stop_after_attempt(max(1, attempts)),
        wait=wait_exponential(multiplier=0.2, min=0.2, max=5),
        retry=retry_if_exception_type(OSError),
        reraise=True,
    ):
        with attempt:
            return await asyncio.open_connection(host, port)
    raise ConnectionError(f"could not connect to {host}:{port}")


async def connect_session(cfg: SessionConfig, stream: TagStream) -> SessionResult:
    """Connect to cfg.host:cfg.port (retrying with backoff) and run the session."""
    reader, writer = await _open_connection(cfg.host, cfg.port, cfg.connect_attempts)
    logger.info("🔌 Connected to peer at %s:%d", cfg.host, cfg.port)
    return await run_session(cfg, stream, reader, writer)
