"""Seedable simulator of two parties' detection streams.

Each party hosts a pair source. One photon of every pair is detected locally,
the other travels through the channel and is detected by the peer. Both
detectors also see uncorrelated background. Every detection is stamped on the
detecting party's local clock, so the output is exactly what two time taggers
would record.

Experiment files are plain KEY=VALUE text read with python-dotenv; see
`load_experiment_config` for the schema.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np
import numpy.typing as npt
from dotenv import dotenv_values

from app.peakfit import PeakShape
from app.tags import TagStream, quantize
from app.utils.config_utils import PS_PER_S, parse_float, parse_int, seconds_to_ps
from app.utils.errors import DataError
from app.utils.setup_logger import setup_logger
from app.utils.types import JitterMode, Party

logger = setup_logger(__name__)

CONFIG_VERSION = 1
FIBER_SPEED_MPS = 2.04e8
# each detector carries 1/√2 of the pair jitter in `detector` mode
DEFAULT_DETECTOR_SIGMA_SCALE = 1.0 / math.sqrt(2.0)
LORENTZ_CLAMP_PS = 50_000.0
DEFAULT_SCHEDULE = "0:1.7"
INT64_LIMIT = float(2**63 - 1)

TimeArray = npt.NDArray[np.int64]


class ConfigError(DataError):
    """Invalid simulation parameters or experiment file."""


class ClockOverflow(DataError):
    """A clock reading does not fit in signed 64-bit picoseconds."""


@dataclass(frozen=True)
class ClockModel:
    """Local clock reading t + b + d·t + a·t² plus white phase steps.

    `a_per_s` multiplies t in seconds, so its ps contribution is a·t_ps²/10¹².
    """

    b_ps: float = 0.0
    d: float = 0.0
    a_per_s: float = 0.0
    white_phase_sigma_ps: float = 0.0

    def __post_init__(self) -> None:
        if abs(self.d) >= 1e-6:
            raise ConfigError(f"|d| must be below 1e-6, got {self.d}")
        if abs(self.a_per_s) >= 1e-12:
            raise ConfigError(f"|a| must be below 1e-12 per s, got {self.a_per_s}")
        if self.white_phase_sigma_ps < 0:
            raise ConfigError("white phase noise must be non-negative")

    def deviation_ps(self, true_time_ps: npt.ArrayLike) -> npt.NDArray[np.float64]:
        """Deterministic deviation b + d·t + a·t² in ps (no phase noise)."""
        t = np.asarray(true_time_ps, dtype=np.float64)
        return self.b_ps + self.d * t + self.a_per_s * t * t / PS_PER_S


@dataclass(frozen=True)
class ChannelSegment:
    """Delays in force from `t_switch_ps` until the next switch."""

    t_switch_ps: int
    delta_ab_ps: int
    delta_ba_ps: int
    length_m: float | None = None

    @property
    def label(self) -> str:
        """Human-readable segment label used in reports."""
        if self.length_m is not None:
            return f"L={self.length_m:g}m"
        return f"ab={self.delta_ab_ps}ps,ba={self.delta_ba_ps}ps"


def _default_schedule() -> tuple[ChannelSegment, ...]:
    return (ChannelSegment(0, 0, 0),)


@dataclass(frozen=True)
class ChannelModel:
    """Piecewise-constant delay schedule and per-direction transmission."""

    schedule: tuple[ChannelSegment, ...] = field(default_factory=_default_schedule)
    transmission_ab: float = 1.0
    transmission_ba: float = 1.0
    v_mps: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "schedule", tuple(self.schedule))
        if not self.schedule or self.schedule[0].t_switch_ps != 0:
            raise ConfigError("channel schedule must start at t=0")
        switches = [s.t_switch_ps for s in self.schedule]
        if any(b <= a for a, b in zip(switches, switches[1:])):
            raise ConfigError("channel switch times must be strictly increasing")
        if any(s.delta_ab_ps < 0 or s.delta_ba_ps < 0 for s in self.schedule):
            raise ConfigError("channel delays must be non-negative")
        for value in (self.transmission_ab, self.transmission_ba):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"transmission must lie in [0, 1], got {value}")

    @classmethod
    def symmetric(cls, delay_ps: int) -> ChannelModel:
        """Constant channel with equal delays both ways."""
        return cls((ChannelSegment(0, delay_ps, delay_ps),))

    @classmethod
    def from_lengths(
        cls,
        schedule: Sequence[tuple[float, float]],
        v_mps: float = FIBER_SPEED_MPS,
        transmission_ab: float = 1.0,
        transmission_ba: float = 1.0,
    ) -> ChannelModel:
        """Build a symmetric schedule from (t_switch_s, length_m) pairs."""
        if v_mps <= 0:
            raise ConfigError("propagation speed must be positive")
        segments = []
        for t_s, length_m in schedule:
            delay = int(round(length_m / v_mps * PS_PER_S))
            segments.append(ChannelSegment(seconds_to_ps(t_s), delay, delay, length_m))
        return cls(tuple(segments), transmission_ab, transmission_ba, v_mps)

    @property
    def length_based(self) -> bool:
        """True when every segment was built from a path length."""
        return self.v_mps is not None and all(s.length_m is not None for s in self.schedule)

    @property
    def switch_times_ps(self) -> TimeArray:
        """Segment start times."""
        return np.array([s.t_switch_ps for s in self.schedule], dtype=np.int64)

    @property
    def labels(self) -> list[str]:
        """Segment labels in schedule order."""
        return [s.label for s in self.schedule]

    def segment_indices(self, true_time_ps: npt.ArrayLike) -> npt.NDArray[np.intp]:
        """Index of the segment in force at each time (half-open segments)."""
        t = np.asarray(true_time_ps, dtype=np.int64)
        if t.size and int(t.min()) < 0:
            raise ConfigError("time precedes the first channel segment")
        return np.searchsorted(self.switch_times_ps, t, side="right") - 1

    def segment_at(self, true_time_ps: int) -> ChannelSegment:
        """Segment in force at `true_time_ps`."""
        return self.schedule[int(self.segment_indices(true_time_ps))]

    def length_at(self, true_time_ps: int) -> float | None:
        """Path length in metres at `true_time_ps`, when the schedule is length-based."""
        return self.segment_at(true_time_ps).length_m


@dataclass(frozen=True)
class SourceModel:
    """Pair source of one party and the detectors that see it.

    The detected pair rate is pair_rate_hz · local_eff · remote_eff before
    channel transmission. `jitter=None` disables timing jitter.
    """

    pair_rate_hz: float = 800.0
    local_eff: float = 0.5
    remote_eff: float = 0.5
    background_rate_hz: float = 500.0
    jitter: PeakShape | None = field(default_factory=PeakShape)

    def __post_init__(self) -> None:
        if self.pair_rate_hz < 0 or self.background_rate_hz < 0:
            raise ConfigError("rates must be non-negative")
        for eff in (self.local_eff, self.remote_eff):
            if not 0.0 <= eff <= 1.0:
                raise ConfigError(f"efficiency must lie in [0, 1], got {eff}")

    @property
    def detected_pair_rate_hz(self) -> float:
        """Rate of pairs with both photons detected, ignoring channel loss."""
        return self.pair_rate_hz * self.local_eff * self.remote_eff


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one simulated run."""

    duration_ps: int
    seed: int = 0
    clock_a: ClockModel = field(default_factory=ClockModel)
    clock_b: ClockModel = field(default_factory=ClockModel)
    channel: ChannelModel = field(default_factory=ChannelModel)
    source_a: SourceModel = field(default_factory=SourceModel)
    source_b: SourceModel = field(default_factory=SourceModel)
    quantize_ps: int = 1
    noise_block_ps: int = 2 * PS_PER_S
    jitter_mode: JitterMode = JitterMode.PAIR
    detector_sigma_scale: float = DEFAULT_DETECTOR_SIGMA_SCALE

    def __post_init__(self) -> None:
        object.__setattr__(self, "jitter_mode", JitterMode(self.jitter_mode))
        if self.duration_ps <= 0:
            raise ConfigError("duration must be positive")
        if self.quantize_ps < 1:
            raise ConfigError("quantization step must be at least 1 ps")
        if self.noise_block_ps <= 0:
            raise ConfigError("noise block must be positive")
        if self.detector_sigma_scale <= 0:
            raise ConfigError("detector sigma scale must be positive")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")

    def with_seed(self, seed: int) -> ExperimentConfig:
        """Copy of this config with another seed."""
        return replace(self, seed=seed)


@dataclass(frozen=True)
class SegmentTruth:
    """Ground truth for one channel segment."""

    label: str
    t_start_ps: int
    t_end_ps: int
    delta_ab_ps: int
    delta_ba_ps: int
    length_m: float | None
    emitted_pairs: dict[str, int]
    detected_pairs: dict[str, int]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Oracle data for one simulation: true offsets, delays and pair counts."""

    config: ExperimentConfig
    segments: tuple[SegmentTruth, ...]
    phase_a_ps: npt.NDArray[np.float64]
    phase_b_ps: npt.NDArray[np.float64]
    emitted_pairs: dict[str, int]
    detected_pairs: dict[str, int]

    def _phase(self, steps: npt.NDArray[np.float64], t: npt.NDArray[np.int64]) -> Any:
        idx = np.clip(t // self.config.noise_block_ps, 0, len(steps) - 1)
        return steps[idx]

    def offset_at(self, true_time_ps: npt.ArrayLike) -> Any:
        """True δ(t) = Bob's reading minus Alice's, including injected phase steps."""
        t = np.asarray(true_time_ps, dtype=np.int64)
        out = (
            self.config.clock_b.deviation_ps(t)
            + self._phase(self.phase_b_ps, t)
            - self.config.clock_a.deviation_ps(t)
            - self._phase(self.phase_a_ps, t)
        )
        return float(out) if np.ndim(out) == 0 else out

    def delays_at(self, true_time_ps: int) -> tuple[int, int]:
        """True (Δt_AB, Δt_BA) at `true_time_ps`."""
        return delay_at(self.config.channel, true_time_ps)

    def segment_at(self, true_time_ps: int) -> SegmentTruth:
        """Segment in force at `true_time_ps`."""
        return self.segments[int(self.config.channel.segment_indices(true_time_ps))]

    def expected_peaks(self, true_time_ps: int) -> tuple[float, float]:
        """True peak centers (τ_AB, τ_BA) = (δ + Δt_AB, δ − Δt_BA)."""
        delta = self.offset_at(true_time_ps)
        ab, ba = self.delays_at(true_time_ps)
        return delta + ab, delta - ba

    def block_offsets(self, t_a_ps: int) -> list[tuple[int, float]]:
        """True δ at the midpoint of each complete block."""
        n = self.config.duration_ps // t_a_ps
        return [(k, self.offset_at(k * t_a_ps + t_a_ps // 2)) for k in range(n)]

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready summary."""
        return {
            "duration_ps": self.config.duration_ps,
            "seed": self.config.seed,
            "emitted_pairs": dict(self.emitted_pairs),
            "detected_pairs": dict(self.detected_pairs),
            "segments": [
                {
                    "label": s.label,
                    "t_start_ps": s.t_start_ps,
                    "t_end_ps": s.t_end_ps,
                    "delta_ab_ps": s.delta_ab_ps,
                    "delta_ba_ps": s.delta_ba_ps,
                    "length_m": s.length_m,
                    "true_offset_start_ps": self.offset_at(s.t_start_ps),
                    "emitted_pairs": dict(s.emitted_pairs),
                    "detected_pairs": dict(s.detected_pairs),
                }
                for s in self.segments
            ],
        }


def sample_pair_times(rate_hz: float, duration_ps: int, rng: np.random.Generator) -> TimeArray:
    """Homogeneous Poisson emission times on [0, duration_ps), sorted.

    Raises:
        ConfigError: If the rate is negative.

    """
    if rate_hz < 0:
        raise ConfigError(f"rate must be non-negative, got {rate_hz}")
    if rate_hz == 0 or duration_ps <= 0:
        return np.empty(0, dtype=np.int64)
    n = int(rng.poisson(rate_hz * duration_ps / PS_PER_S))
    return np.sort(rng.integers(0, duration_ps, size=n, dtype=np.int64))


def sample_jitter(
    shape: PeakShape, rng: np.random.Generator, size: int | None = None
) -> Any:
    """Draw pseudo-Voigt timing offsets in ps.

    With probability 1−f a Gaussian of standard deviation σ/√(2 ln 2), else a
    Cauchy of half-width σ clamped to ±50 ns.
    """
    lorentz = rng.random(size) < shape.f
    gauss = rng.normal(0.0, shape.gaussian_sd_ps, size)
    cauchy = np.clip(
        shape.sigma_ps * rng.standard_cauchy(size), -LORENTZ_CLAMP_PS, LORENTZ_CLAMP_PS
    )
    out = np.where(lorentz, cauchy, gauss)
    return float(out) if size is None else out


def local_clock_reading(clock: ClockModel, true_time_ps: int) -> int:
    """Read `clock` at `true_time_ps`, evaluated exactly and rounded to 1 ps.

    Raises:
        ClockOverflow: If the reading does not fit in 64 bits.

    """
    t = Fraction(int(true_time_ps))
    reading = (
        t
        + Fraction(clock.b_ps)
        + Fraction(clock.d) * t
        + Fraction(clock.a_per_s) * t * t / PS_PER_S
    )
    value = round(reading)
    if not -(2**63) <= value < 2**63:
        raise ClockOverflow(f"clock reading {value} ps overflows 64 bits")
    return value


def clock_readings(
    clock: ClockModel,
    true_time_ps: TimeArray,
    phase_steps_ps: npt.NDArray[np.float64] | None = None,
    noise_block_ps: int = 2 * PS_PER_S,
) -> TimeArray:
    """Vectorized clock readings with optional per-noise-block phase steps.

    Raises:
        ClockOverflow: If any reading does not fit in 64 bits.

    """
    t = np.asarray(true_time_ps, dtype=np.int64)
    deviation = clock.deviation_ps(t)
    if phase_steps_ps is not None and len(phase_steps_ps):
        idx = np.clip(t // noise_block_ps, 0, len(phase_steps_ps) - 1)
        deviation = deviation + phase_steps_ps[idx]
    if t.size and float(np.max(np.abs(t.astype(np.float64) + deviation))) >= INT64_LIMIT:
        raise ClockOverflow("clock reading overflows 64 bits")
    return t + np.rint(deviation).astype(np.int64)


def delay_at(channel: ChannelModel, true_time_ps: int) -> tuple[int, int]:
    """Return (Δt_AB, Δt_BA) in force at `true_time_ps`.

    Raises:
        ConfigError: If the time precedes the first segment.

    """
    segment = channel.segment_at(true_time_ps)
    return segment.delta_ab_ps, segment.delta_ba_ps


def _split_jitter(
    config: ExperimentConfig, shape: PeakShape | None, n: int, rng: np.random.Generator
) -> tuple[npt.NDArray[np.float64], npt.NDArray[np.float64]]:
    if shape is None:
        return np.zeros(n), np.zeros(n)
    if config.jitter_mode is JitterMode.PAIR:
        j = np.asarray(sample_jitter(shape, rng, n))
        return -0.5 * j, 0.5 * j
    scaled = PeakShape(shape.f, shape.sigma_ps * config.detector_sigma_scale)
    return np.asarray(sample_jitter(scaled, rng, n)), np.asarray(sample_jitter(scaled, rng, n))


@dataclass
class _Detections:
    true_times: list[TimeArray] = field(default_factory=list)
    jitter: list[npt.NDArray[np.float64]] = field(default_factory=list)

    def add(self, times: TimeArray, jitter: npt.NDArray[np.float64] | None = None) -> None:
        self.true_times.append(times)
        self.jitter.append(np.zeros(len(times)) if jitter is None else jitter)


def _emit_source(
    config: ExperimentConfig,
    source: SourceModel,
    origin: Party,
    rng: np.random.Generator,
    local: _Detections,
    remote: _Detections,
) -> tuple[TimeArray, npt.NDArray[np.bool_]]:
    channel = config.channel
    transmission = channel.transmission_ab if origin is Party.ALICE else channel.transmission_ba
    emissions = sample_pair_times(source.pair_rate_hz, config.duration_ps, rng)
    n = len(emissions)
    local_hit = rng.random(n) < source.local_eff
    remote_hit = rng.random(n) < source.remote_eff * transmission
    local_j, remote_j = _split_jitter(config, source.jitter, n, rng)

    segment = channel.segment_indices(emissions)
    delays = np.array(
        [s.delta_ab_ps if origin is Party.ALICE else s.delta_ba_ps for s in channel.schedule],
        dtype=np.int64,
    )
    arrival = emissions + delays[segment]
    remote_hit &= arrival < config.duration_ps

    local.add(emissions[local_hit], local_j[local_hit])
    remote.add(arrival[remote_hit], remote_j[remote_hit])
    return emissions, local_hit & remote_hit


def _build_stream(
    party: Party,
    clock: ClockModel,
    phase: npt.NDArray[np.float64],
    detections: _Detections,
    config: ExperimentConfig,
) -> TagStream:
    true_times = np.concatenate(detections.true_times)
    jitter = np.concatenate(detections.jitter)
    times = clock_readings(clock, true_times, phase, config.noise_block_ps)
    times = times + np.rint(jitter).astype(np.int64)
    times.sort(kind="stable")
    stream = TagStream.from_times(
        party, times, epoch_info={"duration_ps": config.duration_ps, "seed": config.seed}
    )
    return quantize(stream, config.quantize_ps)


def _segment_counts(
    config: ExperimentConfig,
    emissions: dict[str, TimeArray],
    both: dict[str, npt.NDArray[np.bool_]],
) -> tuple[SegmentTruth, ...]:
    channel = config.channel
    bounds = [s.t_switch_ps for s in channel.schedule[1:]] + [config.duration_ps]
    segments = []
    for k, seg in enumerate(channel.schedule):
        start, end = seg.t_switch_ps, bounds[k]
        emitted = {}
        detected = {}
        for name, times in emissions.items():
            in_seg = (times >= start) & (times < end)
            emitted[name] = int(np.count_nonzero(in_seg))
            detected[name] = int(np.count_nonzero(in_seg & both[name]))
        segments.append(
            SegmentTruth(
                label=seg.label,
                t_start_ps=start,
                t_end_ps=end,
                delta_ab_ps=seg.delta_ab_ps,
                delta_ba_ps=seg.delta_ba_ps,
                length_m=seg.length_m,
                emitted_pairs=emitted,
                detected_pairs=detected,
            )
        )
    return tuple(segments)


def simulate_two_party(config: ExperimentConfig) -> tuple[TagStream, TagStream, GroundTruth]:
    """Simulate both parties' tag streams for `config`.

    Identical config and seed give bit-identical streams.

    Args:
        config (ExperimentConfig): Simulation parameters.

    Returns:
        tuple[TagStream, TagStream, GroundTruth]: Alice's stream, Bob's stream and the oracle.

    Raises:
        ConfigError: If the configuration is inconsistent.
        ClockOverflow: If a clock reading overflows.

    """
    rng = np.random.default_rng(config.seed)
    n_noise = -(-config.duration_ps // config.noise_block_ps)
    phase_a = rng.normal(0.0, config.clock_a.white_phase_sigma_ps, n_noise)
    phase_b = rng.normal(0.0, config.clock_b.white_phase_sigma_ps, n_noise)

    alice = _Detections()
    bob = _Detections()
    emit_a, both_a = _emit_source(config, config.source_a, Party.ALICE, rng, alice, bob)
    emit_b, both_b = _emit_source(config, config.source_b, Party.BOB, rng, bob, alice)
    for det, source in ((alice, config.source_a), (bob, config.source_b)):
        det.add(sample_pair_times(source.background_rate_hz, config.duration_ps, rng))

    stream_a = _build_stream(Party.ALICE, config.clock_a, phase_a, alice, config)
    stream_b = _build_stream(Party.BOB, config.clock_b, phase_b, bob, config)

    emissions = {"alice": emit_a, "bob": emit_b}
    both = {"alice": both_a, "bob": both_b}
    truth = GroundTruth(
        config=config,
        segments=_segment_counts(config, emissions, both),
        phase_a_ps=phase_a,
        phase_b_ps=phase_b,
        emitted_pairs={k: len(v) for k, v in emissions.items()},
        detected_pairs={k: int(np.count_nonzero(v)) for k, v in both.items()},
    )
    logger.info(
        "✅ Simulated %.1f s (seed %d): %d Alice tags, %d Bob tags",
        config.duration_ps / PS_PER_S,
        config.seed,
        len(stream_a),
        len(stream_b),
    )
    return stream_a, stream_b, truth


def simulate_ensemble(
    config: ExperimentConfig, seeds: Sequence[int], workers: int = 1
) -> list[tuple[TagStream, TagStream, GroundTruth]]:
    """Simulate `config` once per seed, in seed order.

    Runs share no state, so they may execute on parallel worker threads.
    """
    configs = [config.with_seed(s) for s in seeds]
    if workers <= 1:
        return [simulate_two_party(c) for c in configs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(simulate_two_party, configs))


# -----------------------------
# Experiment file (KEY=VALUE)
# -----------------------------
def _get(values: dict[str, str | None], key: str, default: str) -> str:
    raw = values.get(key)
    return default if raw is None or raw == "" else raw


def _clock_from(values: dict[str, str | None], prefix: str) -> ClockModel:
    return ClockModel(
        b_ps=parse_float(f"{prefix}_BIAS_PS", _get(values, f"{prefix}_BIAS_PS", "0")),
        d=parse_float(f"{prefix}_FREQ_OFFSET", _get(values, f"{prefix}_FREQ_OFFSET", "0")),
        a_per_s=parse_float(f"{prefix}_AGING_PER_S", _get(values, f"{prefix}_AGING_PER_S", "0")),
        white_phase_sigma_ps=parse_float(
            f"{prefix}_WHITE_PHASE_PS", _get(values, f"{prefix}_WHITE_PHASE_PS", "0")
        ),
    )


def _source_from(values: dict[str, str | None], prefix: str) -> SourceModel:
    def num(name: str, default: str) -> float:
        key = f"{prefix}_{name}"
        return parse_float(key, _get(values, key, default))

    sigma = num("JITTER_SIGMA_PS", "290")
    return SourceModel(
        pair_rate_hz=num("PAIR_RATE_HZ", "800"),
        local_eff=num("LOCAL_EFF", "0.5"),
        remote_eff=num("REMOTE_EFF", "0.5"),
        background_rate_hz=num("BACKGROUND_HZ", "500"),
        jitter=None if sigma == 0 else PeakShape(num("JITTER_F", "0.2"), sigma),
    )


def _parse_entries(key: str, raw: str, width: int) -> list[list[float]]:
    entries = []
    for item in raw.split(","):
        parts = item.strip().split(":")
        if len(parts) != width:
            raise ConfigError(f"{key}: expected {width} ':'-separated fields in {item!r}")
        try:
            entries.append([float(p) for p in parts])
        except ValueError:
            raise ConfigError(f"{key}: non-numeric entry {item!r}")
    return entries


def _channel_from(values: dict[str, str | None]) -> ChannelModel:
    t_ab = parse_float("TRANSMISSION_AB", _get(values, "TRANSMISSION_AB", "1"))
    t_ba = parse_float("TRANSMISSION_BA", _get(values, "TRANSMISSION_BA", "1"))
    delays = values.get("CHANNEL_DELAYS")
    if delays:
        segments = tuple(
            ChannelSegment(seconds_to_ps(t_s), int(round(ab)), int(round(ba)))
            for t_s, ab, ba in _parse_entries("CHANNEL_DELAYS", delays, 3)
        )
        return ChannelModel(segments, t_ab, t_ba)
    lengths = _get(values, "CHANNEL_SCHEDULE", DEFAULT_SCHEDULE)
    speed = parse_float("FIBER_SPEED_MPS", _get(values, "FIBER_SPEED_MPS", str(FIBER_SPEED_MPS)))
    pairs = [(t_s, length) for t_s, length in _parse_entries("CHANNEL_SCHEDULE", lengths, 2)]
    return ChannelModel.from_lengths(pairs, speed, t_ab, t_ba)


def experiment_config_from_mapping(values: dict[str, str | None]) -> ExperimentConfig:
    """Build an `ExperimentConfig` from parsed KEY=VALUE entries.

    Raises:
        ConfigError: On unknown version or invalid values.

    """
    version = _get(values, "CONFIG_VERSION", str(CONFIG_VERSION))
    if version != str(CONFIG_VERSION):
        raise ConfigError(f"unsupported CONFIG_VERSION {version}")
    try:
        return ExperimentConfig(
            duration_ps=seconds_to_ps(parse_float("DURATION_S", _get(values, "DURATION_S", "60"))),
            seed=parse_int("SEED", _get(values, "SEED", "0")),
            clock_a=_clock_from(values, "CLOCK_A"),
            clock_b=_clock_from(values, "CLOCK_B"),
            channel=_channel_from(values),
            source_a=_source_from(values, "SOURCE_A"),
            source_b=_source_from(values, "SOURCE_B"),
            quantize_ps=parse_int("QUANTIZE_PS", _get(values, "QUANTIZE_PS", "1")),
            noise_block_ps=seconds_to_ps(
                parse_float("NOISE_BLOCK_S", _get(values, "NOISE_BLOCK_S", "2"))
            ),
            jitter_mode=JitterMode(_get(values, "JITTER_MODE", "pair").lower()),
            detector_sigma_scale=parse_float(
                "DETECTOR_SIGMA_SCALE",
                _get(values, "DETECTOR_SIGMA_SCALE", repr(DEFAULT_DETECTOR_SIGMA_SCALE)),
            ),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    """Read an experiment file; `seed` overrides SEED when given.

    Raises:
        ConfigError: If the file is missing or invalid.

    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"experiment config not found: {path}")
    config = experiment_config_from_mapping(dict(dotenv_values(path)))
    if seed is not None:
        config = config.with_seed(seed)
    logger.debug("Loaded experiment config from %s", path)
    return config


def dump_experiment_config(config: ExperimentConfig) -> str:
    """Serialize `config` to the KEY=VALUE schema read by `load_experiment_config`."""
    lines = [
        f"CONFIG_VERSION={CONFIG_VERSION}",
        f"DURATION_S={config.duration_ps / PS_PER_S!r}",
        f"SEED={config.seed}",
        f"QUANTIZE_PS={config.quantize_ps}",
        f"NOISE_BLOCK_S={config.noise_block_ps / PS_PER_S!r}",
        f"JITTER_MODE={config.jitter_mode.value}",
        f"DETECTOR_SIGMA_SCALE={config.detector_sigma_scale!r}",
    ]
    for prefix, clock in (("CLOCK_A", config.clock_a), ("CLOCK_B", config.clock_b)):
        lines += [
            f"{prefix}_BIAS_PS={clock.b_ps!r}",
            f"{prefix}_FREQ_OFFSET={clock.d!r}",
            f"{prefix}_AGING_PER_S={clock.a_per_s!r}",
            f"{prefix}_WHITE_PHASE_PS={clock.white_phase_sigma_ps!r}",
        ]
    channel = config.channel
    if channel.length_based:
        entries = ",".join(f"{s.t_switch_ps / PS_PER_S!r}:{s.length_m!r}" for s in channel.schedule)
        lines += [f"CHANNEL_SCHEDULE={entries}", f"FIBER_SPEED_MPS={channel.v_mps!r}"]
    else:
        entries = ",".join(
            f"{s.t_switch_ps / PS_PER_S!r}:{s.delta_ab_ps}:{s.delta_ba_ps}"
            for s in channel.schedule
        )
        lines.append(f"CHANNEL_DELAYS={entries}")
    lines += [
        f"TRANSMISSION_AB={channel.transmission_ab!r}",
        f"TRANSMISSION_BA={channel.transmission_ba!r}",
    ]
    for prefix, source in (("SOURCE_A", config.source_a), ("SOURCE_B", config.source_b)):
        lines += [
            f"{prefix}_PAIR_RATE_HZ={source.pair_rate_hz!r}",
            f"{prefix}_LOCAL_EFF={source.local_eff!r}",
            f"{prefix}_REMOTE_EFF={source.remote_eff!r}",
            f"{prefix}_BACKGROUND_HZ={source.background_rate_hz!r}",
        ]
        if source.jitter is None:
            lines.append(f"{prefix}_JITTER_SIGMA_PS=0")
        else:
            lines += [
                f"{prefix}_JITTER_F={source.jitter.f!r}",
                f"{prefix}_JITTER_SIGMA_PS={source.jitter.sigma_ps!r}",
            ]
    return "\n".join(lines) + "\n"
