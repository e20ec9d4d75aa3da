"""Block-wise offset tracking and the statistics built on the offset series.

`track` cuts both streams into acquisition blocks and runs the peak search,
the two-peak fit and the offset estimate on every block. The resulting series
feeds the drift fit, Allan/time deviation, the precision model and the
delay-attack analysis.
"""

from __future__ import annotations

import math
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import allantools
import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.stats import linregress

from app import config
from app.clocksim import FIBER_SPEED_MPS, ChannelModel, ExperimentConfig, simulate_ensemble
from app.peakfit import PeakShape, SyncEstimate, estimate_sync, fit_double_peak
from app.tags import Block, TagStream, split_blocks
from app.utils.config_utils import PS_PER_S, seconds_to_ps
from app.utils.errors import AnalysisError, DataError, PairSyncError
from app.utils.metrics import record_block_metrics
from app.utils.setup_logger import setup_logger
from app.utils.types import SegmentRow
from app.xcorr import LocateSettings, NoPeak, locate_peaks

logger = setup_logger(__name__)

FloatArray = npt.NDArray[np.float64]
SERIES_COLUMNS = [
    "block_index",
    "block_epoch_s",
    "delta_ps",
    "sigma_ps",
    "round_trip_ps",
    "segment_label",
]
TRANSITION_LABEL = "transition"


class TrackingFailed(AnalysisError):
    """No block of the session produced an estimate."""


class RankDeficient(AnalysisError):
    """The drift design matrix is singular (too few distinct epochs)."""


class SeriesTooShort(DataError):
    """Not enough points for the requested statistic."""


class DegenerateDistances(DataError):
    """All path lengths are equal, so no slope can be fitted."""


class InvalidModel(DataError):
    """Precision model parameters must be positive."""


@dataclass(frozen=True, eq=False)
class SyncSeries:
    """Per-block estimates of one session, in block order.

    Failed blocks are listed in `gaps` with the failure in `failures`; they are
    never interpolated.
    """

    estimates: tuple[SyncEstimate, ...]
    t_a_ps: int
    gaps: tuple[int, ...] = ()
    failures: dict[int, str] = field(default_factory=dict)
    segment_labels: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.estimates)

    @property
    def block_indices(self) -> npt.NDArray[np.int64]:
        """Block index of each estimate."""
        return np.array([e.block_index for e in self.estimates], dtype=np.int64)

    @property
    def epochs_s(self) -> FloatArray:
        """Block mid-epochs in seconds."""
        return np.array([e.epoch_mid_ps / PS_PER_S for e in self.estimates], dtype=np.float64)

    @property
    def deltas_ps(self) -> FloatArray:
        """Offset estimates in ps."""
        return np.array([e.delta_ps for e in self.estimates], dtype=np.float64)

    @property
    def sigmas_ps(self) -> FloatArray:
        """One-sigma offset uncertainties in ps."""
        return np.array([e.sigma_delta_ps for e in self.estimates], dtype=np.float64)

    @property
    def round_trips_ps(self) -> FloatArray:
        """Round-trip estimates in ps."""
        return np.array([e.round_trip_ps for e in self.estimates], dtype=np.float64)

    def negated(self) -> SyncSeries:
        """The series as reported by the other party."""
        return replace(self, estimates=tuple(e.negated() for e in self.estimates))

    def with_labels(self, labels: Sequence[str]) -> SyncSeries:
        """Attach one segment label per estimate."""
        if len(labels) != len(self.estimates):
            raise ValueError("one label per estimate is required")
        return replace(self, segment_labels=tuple(labels))

    def to_frame(self) -> pd.DataFrame:
        """CSV-ready frame with the documented series columns."""
        labels = self.segment_labels or ("",) * len(self.estimates)
        return pd.DataFrame(
            {
                "block_index": self.block_indices,
                "block_epoch_s": self.epochs_s,
                "delta_ps": self.deltas_ps,
                "sigma_ps": self.sigmas_ps,
                "round_trip_ps": self.round_trips_ps,
                "segment_label": list(labels),
            },
            columns=SERIES_COLUMNS,
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, t_a_ps: int | None = None) -> SyncSeries:
        """Rebuild a series from `to_frame` output.

        Missing block indices between the first and last row become gaps. The
        block length is inferred from the first row when not given.

        Raises:
            SeriesTooShort: If the frame has no rows.
            DataError: If a required column is missing.

        """
        missing = [c for c in SERIES_COLUMNS[:5] if c not in frame.columns]
        if missing:
            raise DataError(f"series is missing columns: {missing}")
        if frame.empty:
            raise SeriesTooShort("series file has no rows")

        index = frame["block_index"].astype(np.int64).to_numpy()
        epochs = frame["block_epoch_s"].astype(np.float64).to_numpy()
        if t_a_ps is None:
            t_a_ps = seconds_to_ps(epochs[0] / (index[0] + 0.5))
        estimates = tuple(
            SyncEstimate(
                delta_ps=float(row.delta_ps),
                round_trip_ps=float(row.round_trip_ps),
                sigma_delta_ps=float(row.sigma_ps),
                block_index=int(row.block_index),
                epoch_mid_ps=seconds_to_ps(float(row.block_epoch_s)),
            )
            for row in frame.itertuples(index=False)
        )
        present = set(index.tolist())
        gaps = tuple(k for k in range(int(index.min()), int(index.max()) + 1) if k not in present)
        labels: tuple[str, ...] = ()
        if "segment_label" in frame.columns:
            labels = tuple("" if pd.isna(v) else str(v) for v in frame["segment_label"])
        return cls(estimates, t_a_ps, gaps, {}, labels)


@dataclass(frozen=True, eq=False)
class DriftFit:
    """Parabola δ(t) = a·t² + d·t + b fitted to a series (t in s)."""

    a_per_s: float
    d: float
    b_ps: float
    sigma_a_per_s: float
    sigma_d: float
    sigma_b_ps: float
    residuals_ps: FloatArray
    epochs_s: FloatArray
    block_indices: npt.NDArray[np.int64]
    weighted: bool = False

    def predict_ps(self, t_s: npt.ArrayLike) -> FloatArray:
        """Evaluate the fitted parabola in ps."""
        t = np.asarray(t_s, dtype=np.float64)
        return self.a_per_s * PS_PER_S * t * t + self.d * PS_PER_S * t + self.b_ps

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready report."""
        return {
            "a_per_s": self.a_per_s,
            "d": self.d,
            "b_ps": self.b_ps,
            "sigma_a_per_s": self.sigma_a_per_s,
            "sigma_d": self.sigma_d,
            "sigma_b_ps": self.sigma_b_ps,
            "weighted": self.weighted,
            "n_points": len(self.residuals_ps),
            "residual_rms_ps": float(np.sqrt(np.mean(self.residuals_ps**2))),
            "block_index": self.block_indices.tolist(),
            "residuals_ps": self.residuals_ps.tolist(),
        }


@dataclass(frozen=True)
class StabilityReport:
    """ADEV (fractional) and TDEV (ps) of drift residuals at octave-spaced τ."""

    adev: tuple[tuple[float, float], ...]
    tdev: tuple[tuple[float, float], ...]
    residual_std_ps: float
    n_points: int

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready report."""
        return {
            "adev": [{"tau_s": t, "value": v} for t, v in self.adev],
            "tdev": [{"tau_s": t, "ps": v} for t, v in self.tdev],
            "residual_std_ps": self.residual_std_ps,
            "n_points": self.n_points,
        }


@dataclass(frozen=True)
class PrecisionModel:
    """Timing response V(0) in 1/ns, detected pair rate R and acquisition time T_a."""

    v0_per_ns: float
    rate_hz: float
    t_a_s: float

    def __post_init__(self) -> None:
        if min(self.v0_per_ns, self.rate_hz, self.t_a_s) <= 0:
            raise InvalidModel("V(0), R and T_a must all be positive")

    @classmethod
    def from_shape(cls, shape: PeakShape, rate_hz: float, t_a_s: float) -> PrecisionModel:
        """Model with V(0) taken from a peak shape."""
        return cls(shape.v0_per_ps * 1000.0, rate_hz, t_a_s)


@dataclass(frozen=True)
class PrecisionPoint:
    """Measured offset scatter at one acquisition time."""

    t_a_s: float
    n_blocks: int
    std_delta_ps: float
    predicted_ps: float


@dataclass(frozen=True)
class PrecisionScaling:
    """Least-squares coefficient c of δt = c/√(R·T_a)."""

    c_ps: float
    c_err_ps: float
    predicted_c_ps: float
    implied_v0_per_ns: float

    @property
    def ratio(self) -> float:
        """Measured over predicted coefficient."""
        return self.c_ps / self.predicted_c_ps


@dataclass(frozen=True)
class DelayCorrelation:
    """Linear dependence of the offset on path length."""

    slope_ps_per_m: float
    stderr_ps_per_m: float
    intercept_ps: float
    rvalue: float

    def consistent_with_zero(self, n_sigma: float = 3.0) -> bool:
        """True when |slope| is within `n_sigma` standard errors of zero."""
        return abs(self.slope_ps_per_m) <= n_sigma * self.stderr_ps_per_m


# -----------------------------
# Tracking
# -----------------------------
def process_block(
    a: TagStream | npt.ArrayLike,
    b: TagStream | npt.ArrayLike,
    index: int,
    t_a_ps: int,
    shape: PeakShape,
    settings: LocateSettings | None = None,
) -> SyncEstimate:
    """Locate, fit and estimate one block.

    Offline tracking and the live session both call this, so identical inputs
    give identical estimates.

    Raises:
        NoPeak, NotConverged, DegenerateOverlap: Analysis failures.
        EmptyStream, InsufficientSupport: Data problems in the block.

    """
    settings = settings or replace(LocateSettings.from_config(), shape=shape)
    started = time.perf_counter()
    try:
        candidates = locate_peaks(a, b, settings)
        if candidates.fine_histogram is None:
            raise NoPeak("peak search returned no fine histogram")
        fit = fit_double_peak(candidates.fine_histogram, shape, candidates)
        estimate = estimate_sync(fit, index, index * t_a_ps + t_a_ps // 2)
    except PairSyncError as exc:
        record_block_metrics(type(exc).__name__, time.perf_counter() - started)
        raise
    record_block_metrics("ok", time.perf_counter() - started, estimate.delta_ps)
    return estimate


def complete_blocks(stream: TagStream, t_a_ps: int) -> dict[int, Block]:
    """Blocks of `stream` keyed by index, keeping only whole blocks at index >= 0.

    A tag before the local epoch falls in a negative block and is dropped with
    it. The block running past the stream end is partial and skipped too.
    """
    blocks = {}
    for blk in split_blocks(stream, t_a_ps):
        if blk.index < 0:
            continue
        if blk.partial:
            logger.debug("Skipping partial %s block %d", stream.party.name, blk.index)
            continue
        blocks[blk.index] = blk
    return blocks


def track(
    a: TagStream,
    b: TagStream,
    t_a_ps: int,
    shape: PeakShape | None = None,
    settings: LocateSettings | None = None,
    workers: int | None = None,
) -> SyncSeries:
    """Estimate the offset block by block.

    A block index is processed when both streams hold a complete block with
    that index; failures and one-sided blocks become gaps.

    Args:
        a (TagStream): Alice's stream.
        b (TagStream): Bob's stream.
        t_a_ps (int): Block length in ps.
        shape (Optional[PeakShape]): Timing response; defaults from config.
        settings (Optional[LocateSettings]): Peak search settings.
        workers (Optional[int]): Worker threads; defaults to PAIRSYNC_TRACK_WORKERS.

    Returns:
        SyncSeries: Ordered estimates with gaps.

    Raises:
        TrackingFailed: If no block succeeds.

    """
    shape = shape or PeakShape.from_config()
    settings = settings or replace(LocateSettings.from_config(), shape=shape)
    workers = workers if workers is not None else config.get_track_workers()

    blocks_a = complete_blocks(a, t_a_ps)
    blocks_b = complete_blocks(b, t_a_ps)
    indices = sorted(set(blocks_a) | set(blocks_b))
    paired = [k for k in indices if k in blocks_a and k in blocks_b]
    failures: dict[int, str] = {
        k: "MissingBlock" for k in indices if k not in blocks_a or k not in blocks_b
    }

    def attempt(k: int) -> SyncEstimate | PairSyncError:
        try:
            return process_block(
                blocks_a[k].tags, blocks_b[k].tags, k, t_a_ps, shape, settings
            )
        except PairSyncError as exc:
            return exc

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attempt, paired))
    else:
        outcomes = [attempt(k) for k in paired]

    estimates = []
    for k, outcome in zip(paired, outcomes):
        if isinstance(outcome, PairSyncError):
            failures[k] = type(outcome).__name__
            logger.warning("⚠️ Block %d failed: %s: %s", k, type(outcome).__name__, outcome)
        else:
            estimates.append(outcome)

    if not estimates:
        reasons = sorted(set(failures.values())) or ["no overlapping blocks"]
        raise TrackingFailed(f"no block produced an estimate ({', '.join(reasons)})")

    logger.info("✅ Tracked %d blocks, %d gaps", len(estimates), len(failures))
    return SyncSeries(
        estimates=tuple(estimates),
        t_a_ps=t_a_ps,
        gaps=tuple(sorted(failures)),
        failures=dict(sorted(failures.items())),
    )


# -----------------------------
# Drift and stability
# -----------------------------
def fit_drift(series: SyncSeries, weighted: bool = False) -> DriftFit:
    """Fit δ(t) = a·t² + d·t + b against block mid-epochs by least squares.

    Args:
        series (SyncSeries): Offset series.
        weighted (bool): Weight points by 1/σ_δ² instead of uniformly.

    Returns:
        DriftFit: Coefficients (a in 1/s, d dimensionless, b in ps) with residuals.

    Raises:
        SeriesTooShort: If fewer than 3 estimates are available.
        RankDeficient: If fewer than 3 distinct epochs are available.

    """
    n = len(series)
    if n < 3:
        raise SeriesTooShort(f"drift fit needs at least 3 estimates, got {n}")

    t = series.epochs_s
    y = series.deltas_ps
    design = np.column_stack([t * t, t, np.ones_like(t)])
    scale = np.ones_like(t)
    if weighted:
        sigma = series.sigmas_ps
        if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
            raise DataError("weighted drift fit needs positive finite sigma for every block")
        scale = 1.0 / sigma

    coef, _, rank, _ = np.linalg.lstsq(design * scale[:, None], y * scale, rcond=None)
    if rank < 3:
        raise RankDeficient("drift fit needs at least 3 distinct block epochs")

    residuals = y - design @ coef
    normal = np.linalg.inv((design * scale[:, None]).T @ (design * scale[:, None]))
    if weighted:
        cov = normal
    else:
        s2 = float(residuals @ residuals) / (n - 3) if n > 3 else float("nan")
        cov = s2 * normal
    err = np.sqrt(np.abs(np.diag(cov)))

    fit = DriftFit(
        a_per_s=float(coef[0]) / PS_PER_S,
        d=float(coef[1]) / PS_PER_S,
        b_ps=float(coef[2]),
        sigma_a_per_s=float(err[0]) / PS_PER_S,
        sigma_d=float(err[1]) / PS_PER_S,
        sigma_b_ps=float(err[2]),
        residuals_ps=residuals,
        epochs_s=t,
        block_indices=series.block_indices,
        weighted=weighted,
    )
    logger.info("📐 Drift fit: a=%.3e /s d=%.3e b=%.1f ps", fit.a_per_s, fit.d, fit.b_ps)
    return fit


def _second_differences(x: FloatArray, m: int) -> FloatArray:
    return x[2 * m :] - 2.0 * x[m:-m] + x[: -2 * m]


def _oadev_direct(x: FloatArray, tau0_s: float, m: int) -> float:
    second = _second_differences(x, m)
    return float(np.sqrt(np.mean(second**2) / 2.0) / (m * tau0_s)) / PS_PER_S


def _tdev_direct(x: FloatArray, m: int) -> float:
    inner = np.convolve(_second_differences(x, m), np.ones(m), mode="valid")
    return float(np.sqrt(np.mean(inner**2) / (6.0 * m * m)))


def allan_deviation(x_ps: npt.ArrayLike, tau0_s: float, m: int) -> float:
    """Overlapping Allan deviation of fractional frequency at τ = m·τ0.

    Args:
        x_ps: Phase (time error) series in ps, evenly spaced by `tau0_s`.
        tau0_s (float): Sample spacing in s.
        m (int): Averaging factor.

    Returns:
        float: Dimensionless σ_y(m·τ0).

    Raises:
        SeriesTooShort: If the series has fewer than 2m+1 points.

    """
    x = np.asarray(x_ps, dtype=np.float64)
    if m < 1 or len(x) < 2 * m + 1:
        raise SeriesTooShort(f"ADEV at m={m} needs {2 * m + 1} points, got {len(x)}")
    # allantools raises on estimates built from a single term
    if len(x) - 2 * m < 2:
        return _oadev_direct(x, tau0_s, m)
    _, dev, _, _ = allantools.oadev(x, rate=1.0 / tau0_s, data_type="phase", taus=[m * tau0_s])
    return float(dev[0]) / PS_PER_S if len(dev) == 1 else _oadev_direct(x, tau0_s, m)


def time_deviation(x_ps: npt.ArrayLike, tau0_s: float, m: int) -> float:
    """Time deviation TDEV(m·τ0) = (m·τ0/√3)·MDEV(m·τ0), in ps.

    Raises:
        SeriesTooShort: If the series has fewer than 3m+1 points.

    """
    x = np.asarray(x_ps, dtype=np.float64)
    if m < 1 or len(x) < 3 * m + 1:
        raise SeriesTooShort(f"TDEV at m={m} needs {3 * m + 1} points, got {len(x)}")
    _, dev, _, _ = allantools.tdev(x, rate=1.0 / tau0_s, data_type="phase", taus=[m * tau0_s])
    return float(dev[0]) if len(dev) == 1 else _tdev_direct(x, m)


def longest_contiguous_run(block_indices: npt.ArrayLike) -> slice:
    """Slice of the longest run of consecutive block indices."""
    idx = np.asarray(block_indices, dtype=np.int64)
    if not len(idx):
        return slice(0, 0)
    breaks = np.flatnonzero(np.diff(idx) != 1) + 1
    starts = np.concatenate([[0], breaks])
    stops = np.concatenate([breaks, [len(idx)]])
    best = int(np.argmax(stops - starts))
    return slice(int(starts[best]), int(stops[best]))


def stability_report(drift: DriftFit, tau0_s: float) -> StabilityReport:
    """ADEV and TDEV of drift residuals at m = 1, 2, 4, …

    Only the longest gap-free run of residuals is used.

    Raises:
        SeriesTooShort: If the run has fewer than 4 points.

    """
    run = longest_contiguous_run(drift.block_indices)
    x = drift.residuals_ps[run]
    n = len(x)
    if n < 4:
        raise SeriesTooShort(f"stability needs a gap-free run of 4 blocks, got {n}")

    adev = []
    tdev = []
    m = 1
    while 2 * m + 1 <= n:
        adev.append((m * tau0_s, allan_deviation(x, tau0_s, m)))
        if 3 * m + 1 <= n:
            tdev.append((m * tau0_s, time_deviation(x, tau0_s, m)))
        m *= 2

    return StabilityReport(
        adev=tuple(adev),
        tdev=tuple(tdev),
        residual_std_ps=float(np.std(drift.residuals_ps, ddof=1)),
        n_points=n,
    )


# -----------------------------
# Precision
# -----------------------------
def predict_precision(model: PrecisionModel) -> float:
    """Offset precision δt = (1/√2)·(1/(2V(0)))·(1/√(R·T_a)) in ps."""
    one_peak_ns = 1.0 / (2.0 * model.v0_per_ns)
    return 1000.0 * one_peak_ns / math.sqrt(2.0) / math.sqrt(model.rate_hz * model.t_a_s)


def resolvable_length_m(precision_ps: float, v_mps: float = FIBER_SPEED_MPS) -> float:
    """Smallest one-way path change v·δt/2 that an offset precision `precision_ps` resolves."""
    return v_mps * precision_ps / PS_PER_S / 2.0


def measure_precision(
    experiment: ExperimentConfig,
    t_a_values_s: Sequence[float],
    seeds: Sequence[int],
    shape: PeakShape | None = None,
    settings: LocateSettings | None = None,
    workers: int = 1,
) -> list[PrecisionPoint]:
    """Scatter of δ̂ − δ_true per acquisition time over simulated sessions.

    Each seed is simulated once and re-tracked at every T_a. The predicted
    column uses Alice's source detected pair rate.
    """
    shape = shape or experiment.source_a.jitter or PeakShape.from_config()
    settings = settings or replace(LocateSettings.from_config(), shape=shape)
    rate = experiment.source_a.detected_pair_rate_hz * experiment.channel.transmission_ab
    runs = simulate_ensemble(experiment, seeds, workers)

    points = []
    for t_a_s in t_a_values_s:
        t_a_ps = seconds_to_ps(t_a_s)
        errors = []
        for stream_a, stream_b, truth in runs:
            series = track(stream_a, stream_b, t_a_ps, shape, settings, workers=1)
            true = np.asarray(truth.offset_at(np.array([e.epoch_mid_ps for e in series.estimates])))
            errors.extend((series.deltas_ps - true).tolist())
        std = float(np.std(errors, ddof=1)) if len(errors) > 1 else float("nan")
        predicted = predict_precision(PrecisionModel.from_shape(shape, rate, t_a_s))
        points.append(PrecisionPoint(t_a_s, len(errors), std, predicted))
        logger.info(
            "🎯 T_a=%g s: std=%.2f ps over %d blocks (predicted %.2f ps)",
            t_a_s,
            std,
            len(errors),
            predicted,
        )
    return points


def fit_precision_scaling(
    points: Sequence[PrecisionPoint], rate_hz: float, shape: PeakShape | None = None
) -> PrecisionScaling:
    """Fit δt = c/√(R·T_a) to measured points in log space.

    Each point's relative error is comparable, so log δt − log(1/√(R·T_a))
    is averaged. The implied V(0) is 1/(2√2·c).

    Raises:
        SeriesTooShort: If no point has a finite scatter.

    """
    shape = shape or PeakShape.from_config()
    usable = [p for p in points if math.isfinite(p.std_delta_ps) and p.std_delta_ps > 0]
    if not usable:
        raise SeriesTooShort("no precision point with a finite scatter")
    x = np.array([1.0 / math.sqrt(rate_hz * p.t_a_s) for p in usable])
    y = np.array([p.std_delta_ps for p in usable])
    logs = np.log(y) - np.log(x)
    c = float(np.exp(logs.mean()))
    c_err = c * float(logs.std(ddof=1) / math.sqrt(len(logs))) if len(logs) > 1 else float("nan")
    predicted_c = 1000.0 / (2.0 * math.sqrt(2.0) * shape.v0_per_ps * 1000.0)
    implied_v0 = 1000.0 / (2.0 * math.sqrt(2.0) * c)
    return PrecisionScaling(c, c_err, predicted_c, implied_v0)


# -----------------------------
# Delay attacks
# -----------------------------
def delay_correlation(
    series: SyncSeries,
    distances_m: npt.ArrayLike,
    residuals: npt.ArrayLike | None = None,
) -> DelayCorrelation:
    """Least-squares slope of δ (or drift residuals) against path length.

    Raises:
        DegenerateDistances: If fewer than two distinct distances are present.

    """
    x = np.asarray(distances_m, dtype=np.float64)
    y = series.deltas_ps if residuals is None else np.asarray(residuals, dtype=np.float64)
    if len(x) != len(y):
        raise ValueError("one distance per estimate is required")
    if len(np.unique(x)) < 2:
        raise DegenerateDistances("delay correlation needs at least two distinct distances")
    result = linregress(x, y)
    return DelayCorrelation(
        slope_ps_per_m=float(result.slope),
        stderr_ps_per_m=float(result.stderr),
        intercept_ps=float(result.intercept),
        rvalue=float(result.rvalue),
    )


def asymmetry_bias(delta_ab_ps: float, delta_ba_ps: float) -> float:
    """Correction −(Δt_AB − Δt_BA)/2 to add to the midpoint offset.

    The midpoint of the two peaks equals δ + (Δt_AB − Δt_BA)/2, so the true
    offset is the midpoint plus this value.

    Raises:
        ValueError: If a delay is negative.

    """
    if delta_ab_ps < 0 or delta_ba_ps < 0:
        raise ValueError("delays must be non-negative")
    return -(delta_ab_ps - delta_ba_ps) / 2.0


def segment_of_blocks(
    series: SyncSeries, channel: ChannelModel
) -> tuple[list[str], list[float | None]]:
    """Segment label and path length for each estimate's block.

    Blocks that straddle a channel switch are labelled "transition".
    """
    switches = channel.switch_times_ps
    labels: list[str] = []
    lengths: list[float | None] = []
    for est in series.estimates:
        start = est.block_index * series.t_a_ps
        end = start + series.t_a_ps
        first = int(np.searchsorted(switches, start, side="right")) - 1
        last = int(np.searchsorted(switches, end - 1, side="right")) - 1
        if first != last or first < 0:
            labels.append(TRANSITION_LABEL)
            lengths.append(None)
        else:
            labels.append(channel.schedule[first].label)
            lengths.append(channel.schedule[first].length_m)
    return labels, lengths


def segment_summary(
    series: SyncSeries, channel: ChannelModel, duration_ps: int | None = None
) -> list[SegmentRow]:
    """Mean offset, its standard error and mean round trip per channel segment.

    Transition blocks are excluded. Segments without estimates are reported
    with zero blocks and NaN statistics.
    """
    labels, _ = segment_of_blocks(series, channel)
    deltas = series.deltas_ps
    trips = series.round_trips_ps
    label_arr = np.array(labels, dtype=object)
    ends = [s.t_switch_ps for s in channel.schedule[1:]]
    last_end = duration_ps
    if last_end is None and len(series):
        last_end = int(series.block_indices.max() + 1) * series.t_a_ps
    ends.append(last_end if last_end is not None else channel.schedule[-1].t_switch_ps)

    rows: list[SegmentRow] = []
    for seg, end in zip(channel.schedule, ends):
        mask = label_arr == seg.label
        n = int(mask.sum())
        d = deltas[mask]
        rows.append(
            SegmentRow(
                label=seg.label,
                t_start_s=seg.t_switch_ps / PS_PER_S,
                t_end_s=end / PS_PER_S,
                blocks=n,
                mean_delta_ps=float(d.mean()) if n else float("nan"),
                stderr_delta_ps=float(d.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan"),
                mean_round_trip_ps=float(trips[mask].mean()) if n else float("nan"),
                asymmetry_bias_ps=asymmetry_bias(seg.delta_ab_ps, seg.delta_ba_ps),
            )
        )
    return rows


def swap_differences(rows: Sequence[SegmentRow]) -> list[dict[str, Any]]:
    """Change of mean offset across each channel switch, with its combined error."""
    out = []
    for before, after in zip(rows, rows[1:]):
        change = after["mean_delta_ps"] - before["mean_delta_ps"]
        sigma = math.hypot(before["stderr_delta_ps"], after["stderr_delta_ps"])
        out.append(
            {
                "from": before["label"],
                "to": after["label"],
                "delta_change_ps": change,
                "sigma_ps": sigma,
                "round_trip_change_ps": after["mean_round_trip_ps"] - before["mean_round_trip_ps"],
            }
        )
    return out
