"""Cross-correlation of two tag streams and coincidence-peak location.

Peaks are found in two stages. A coarse histogram (2 µs bins) over the whole
ambiguity range finds the cluster holding both coincidence peaks; a fine
histogram (16 ps bins) around that cluster resolves the doublet.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.typing as npt
import pandas as pd
from scipy.ndimage import uniform_filter1d
from scipy.signal import correlate, find_peaks

from app import config
from app.peakfit import PeakShape
from app.tags import TagStream
from app.utils.config_utils import PS_PER_S
from app.utils.errors import AnalysisError, DataError
from app.utils.setup_logger import setup_logger
from app.utils.types import CoarseMethod

logger = setup_logger(__name__)

TimeArray = npt.NDArray[np.int64]
CHUNK_TAGS = 1 << 16
CENTROID_PASSES = 3


class EmptyWindow(DataError):
    """Correlation window or bin width is empty."""


class EmptyStream(DataError):
    """A stream without tags was given where tags are required."""


class NoPeak(AnalysisError):
    """No coincidence doublet rises above the detection threshold."""


class NormalizationUndefined(DataError):
    """g² normalization needs positive rates and duration."""


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    """Binned c_AB(τ).

    Bin k counts pairs with t′ − t in [τ_start + kΔ, τ_start + (k+1)Δ).
    """

    bin_width_ps: int
    tau_start_ps: int
    counts: npt.NDArray[Any]
    n_a: int
    n_b: int
    duration_ps: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "counts", np.asarray(self.counts).reshape(-1))
        if self.bin_width_ps <= 0 or len(self.counts) < 1:
            raise EmptyWindow("histogram needs a positive bin width and at least one bin")

    @property
    def n_bins(self) -> int:
        """Number of bins."""
        return len(self.counts)

    @property
    def tau_stop_ps(self) -> int:
        """Upper edge of the last bin (exclusive)."""
        return self.tau_start_ps + self.n_bins * self.bin_width_ps

    @property
    def total(self) -> int:
        """Sum of all counts."""
        return int(self.counts.sum())

    def tau_centers(self) -> npt.NDArray[np.float64]:
        """Bin centers in ps."""
        return self.tau_start_ps + (np.arange(self.n_bins) + 0.5) * self.bin_width_ps

    def __add__(self, other: CorrelationHistogram) -> CorrelationHistogram:
        """Exact sum of two histograms with identical geometry."""
        if (self.bin_width_ps, self.tau_start_ps, self.n_bins) != (
            other.bin_width_ps,
            other.tau_start_ps,
            other.n_bins,
        ):
            raise ValueError("only histograms with identical geometry can be added")
        return CorrelationHistogram(
            bin_width_ps=self.bin_width_ps,
            tau_start_ps=self.tau_start_ps,
            counts=self.counts + other.counts,
            n_a=self.n_a + other.n_a,
            n_b=self.n_b + other.n_b,
            duration_ps=self.duration_ps + other.duration_ps,
        )

    def to_frame(self, g2: npt.ArrayLike | None = None) -> pd.DataFrame:
        """CSV-ready frame with columns tau_ps, counts and optionally g2."""
        frame = pd.DataFrame({"tau_ps": self.tau_centers(), "counts": self.counts})
        if g2 is not None:
            frame["g2"] = np.asarray(g2, dtype=np.float64)
        return frame


@dataclass(frozen=True, eq=False)
class PeakCandidates:
    """Initial peak centers, ordered tau_right ≥ tau_left."""

    tau_right_ps: float
    tau_left_ps: float
    prominence_right: float = 0.0
    prominence_left: float = 0.0
    fine_histogram: CorrelationHistogram | None = None
    coarse_center_ps: float | None = None

    def __post_init__(self) -> None:
        if self.tau_right_ps < self.tau_left_ps:
            raise ValueError("tau_right_ps must not be below tau_left_ps")
        if self.fine_histogram is not None:
            lo = self.fine_histogram.tau_start_ps
            hi = self.fine_histogram.tau_stop_ps
            if not (lo <= self.tau_left_ps and self.tau_right_ps < hi):
                raise ValueError("candidates must lie within the histogram support")


@dataclass(frozen=True)
class LocateSettings:
    """Two-stage peak search geometry and detection threshold."""

    coarse_bin_ps: int = 2_000_000
    fine_bin_ps: int = 16
    fine_half_window_ps: int = 4_000_000
    coarse_range_ps: int = 1_000_000_000
    threshold_k: float = 6.0
    shape: PeakShape = field(default_factory=PeakShape)
    method: CoarseMethod = CoarseMethod.DIRECT

    @classmethod
    def from_config(cls) -> LocateSettings:
        """Settings resolved from the PAIRSYNC_* configuration getters."""
        return cls(
            coarse_bin_ps=config.get_coarse_bin_ps(),
            fine_bin_ps=config.get_fine_bin_ps(),
            fine_half_window_ps=config.get_fine_half_window_ps(),
            coarse_range_ps=config.get_coarse_range_ps(),
            threshold_k=config.get_peak_threshold_k(),
            shape=PeakShape.from_config(),
            method=config.get_coarse_method(),
        )


def _times(stream: TagStream | npt.ArrayLike) -> TimeArray:
    if isinstance(stream, TagStream):
        return stream.times
    return np.asarray(stream, dtype=np.int64)


def overlap_duration_ps(a: TimeArray, b: TimeArray) -> int:
    """Length of the interval covered by both streams (0 if disjoint or empty)."""
    if not len(a) or not len(b):
        return 0
    return max(0, int(min(a[-1], b[-1])) - int(max(a[0], b[0])))


def cross_correlate(
    a: TagStream | npt.ArrayLike,
    b: TagStream | npt.ArrayLike,
    bin_width_ps: int,
    window: tuple[int, int],
    duration_ps: int | None = None,
) -> CorrelationHistogram:
    """Histogram of t′_j − t_i over a delay window by sort-merge.

    For each tag of `a`, the matching range of `b` is found by binary search,
    so the cost is O((n_a + n_b) log n + matches). The window is extended to
    a whole number of bins.

    Args:
        a: Alice's tags (TagStream or sorted int64 times).
        b: Bob's tags.
        bin_width_ps (int): Bin width Δ in ps.
        window (tuple[int, int]): Delay window [tau_min, tau_max).
        duration_ps (Optional[int]): Integration time; defaults to the stream overlap.

    Returns:
        CorrelationHistogram: Counts with 64-bit integers.

    Raises:
        EmptyWindow: If Δ ≤ 0 or tau_min ≥ tau_max.

    """
    tau_min, tau_max = int(window[0]), int(window[1])
    if bin_width_ps <= 0 or tau_min >= tau_max:
        raise EmptyWindow(f"empty correlation window [{tau_min}, {tau_max}) / bin {bin_width_ps}")

    ta = _times(a)
    tb = _times(b)
    n_bins = -(-(tau_max - tau_min) // bin_width_ps)
    span = n_bins * bin_width_ps
    counts = np.zeros(n_bins, dtype=np.int64)

    for start in range(0, len(ta), CHUNK_TAGS):
        chunk = ta[start : start + CHUNK_TAGS]
        lo = np.searchsorted(tb, chunk + tau_min, side="left")
        hi = np.searchsorted(tb, chunk + tau_min + span, side="left")
        per_tag = hi - lo
        matches = int(per_tag.sum())
        if not matches:
            continue
        owner = np.repeat(np.arange(len(chunk)), per_tag)
        first = np.repeat(lo - np.cumsum(per_tag) + per_tag, per_tag)
        j = first + np.arange(matches)
        bins = (tb[j] - chunk[owner] - tau_min) // bin_width_ps
        counts += np.bincount(bins, minlength=n_bins)

    return CorrelationHistogram(
        bin_width_ps=bin_width_ps,
        tau_start_ps=tau_min,
        counts=counts,
        n_a=len(ta),
        n_b=len(tb),
        duration_ps=overlap_duration_ps(ta, tb) if duration_ps is None else duration_ps,
    )


def _coarse_fft(ta: TimeArray, tb: TimeArray, settings: LocateSettings) -> CorrelationHistogram:
    width = settings.coarse_bin_ps
    t0 = min(int(ta[0]), int(tb[0]))
    t1 = max(int(ta[-1]), int(tb[-1]))
    n = (t1 - t0) // width + 1
    seq_a = np.bincount((ta - t0) // width, minlength=n).astype(np.float64)
    seq_b = np.bincount((tb - t0) // width, minlength=n).astype(np.float64)
    full = correlate(seq_b, seq_a, mode="full", method="fft")
    max_lag = min(-(-settings.coarse_range_ps // width), n - 1)
    zero = n - 1
    counts = np.rint(full[zero - max_lag : zero + max_lag + 1]).astype(np.int64)
    return CorrelationHistogram(
        bin_width_ps=width,
        tau_start_ps=-max_lag * width - width // 2,
        counts=np.clip(counts, 0, None),
        n_a=len(ta),
        n_b=len(tb),
        duration_ps=overlap_duration_ps(ta, tb),
    )


def coarse_correlate(
    a: TagStream | npt.ArrayLike,
    b: TagStream | npt.ArrayLike,
    settings: LocateSettings | None = None,
    method: CoarseMethod | str | None = None,
) -> CorrelationHistogram:
    """Coarse histogram over ±coarse_range with bins centered on multiples of Δ.

    `direct` correlates the sparse streams exactly; `fft` correlates binned
    count sequences, which smears each delay over two adjacent lags.
    """
    settings = settings or LocateSettings.from_config()
    method = CoarseMethod(method or settings.method)
    ta, tb = _times(a), _times(b)
    if not len(ta) or not len(tb):
        raise EmptyStream("coarse correlation needs tags on both sides")

    if method is CoarseMethod.FFT:
        return _coarse_fft(ta, tb, settings)

    width = settings.coarse_bin_ps
    half = -(-settings.coarse_range_ps // width)
    tau_min = -half * width - width // 2
    return cross_correlate(ta, tb, width, (tau_min, tau_min + (2 * half + 1) * width))


def _odd_width(fwhm_ps: float, bin_width_ps: int) -> int:
    w = max(1, int(round(fwhm_ps / bin_width_ps)))
    return w if w % 2 else w + 1


def _centroid(h: CorrelationHistogram, start_ps: float, half_ps: float, bkg: float) -> float:
    tau = h.tau_centers()
    center = start_ps
    for _ in range(CENTROID_PASSES):
        near = np.abs(tau - center) <= half_ps
        weight = np.clip(h.counts[near] - bkg, 0.0, None)
        if not weight.sum():
            break
        center = float(np.sum(weight * tau[near]) / weight.sum())
    return center


def detect_doublet(
    h: CorrelationHistogram, settings: LocateSettings
) -> tuple[float, float, float, float]:
    """Find the two strongest peaks in a fine histogram.

    Counts are summed over a sliding window one FWHM wide. A peak must exceed
    baseline + k·√baseline, where baseline is the median windowed sum.

    Returns:
        tuple: (tau_right, tau_left, prominence_right, prominence_left).

    Raises:
        NoPeak: If fewer than two peaks pass the threshold.

    """
    fwhm = settings.shape.fwhm_ps
    w = _odd_width(fwhm, h.bin_width_ps)
    sums = uniform_filter1d(h.counts.astype(np.float64), size=w, mode="constant") * w
    baseline = float(np.median(sums))
    threshold = baseline + settings.threshold_k * math.sqrt(max(baseline, 1.0))

    idx, props = find_peaks(sums, height=threshold, distance=w, prominence=(None, None))
    if len(idx) < 2:
        raise NoPeak(
            f"{len(idx)} peak(s) above threshold {threshold:.1f} (baseline {baseline:.1f})"
        )

    tau = h.tau_centers()
    order = sorted(range(len(idx)), key=lambda i: (-props["prominences"][i], abs(tau[idx[i]])))
    best = order[:2]
    bkg = baseline / w
    found = [
        (_centroid(h, float(tau[idx[i]]), fwhm / 2.0, bkg), float(props["prominences"][i]))
        for i in best
    ]
    found.sort(key=lambda p: p[0], reverse=True)
    (right, p_right), (left, p_left) = found
    return right, left, p_right, p_left


def fine_window(
    a: TagStream | npt.ArrayLike,
    b: TagStream | npt.ArrayLike,
    settings: LocateSettings,
) -> tuple[float, tuple[int, int]]:
    """Coarse cluster center and the fine window around it.

    Ties between equally full coarse bins go to the bin closest to zero delay.

    Raises:
        EmptyStream: If either stream is empty.
        NoPeak: If the coarse histogram holds no coincidence.

    """
    coarse = coarse_correlate(a, b, settings)
    peak = int(coarse.counts.max())
    if peak == 0:
        raise NoPeak("coarse correlation is empty")
    centers = coarse.tau_centers()
    tied = np.flatnonzero(coarse.counts == peak)
    center = float(centers[tied[np.argmin(np.abs(centers[tied]))]])
    lo = int(math.floor(center)) - settings.fine_half_window_ps
    return center, (lo, lo + 2 * settings.fine_half_window_ps)


def locate_peaks(
    a: TagStream | npt.ArrayLike,
    b: TagStream | npt.ArrayLike,
    settings: LocateSettings | None = None,
) -> PeakCandidates:
    """Locate the two coincidence peaks by coarse-then-fine correlation.

    Args:
        a: Alice's tags.
        b: Bob's tags.
        settings (Optional[LocateSettings]): Search geometry; defaults from config.

    Returns:
        PeakCandidates: Centers ordered right ≥ left, with the fine histogram.

    Raises:
        EmptyStream: If either stream is empty.
        NoPeak: If no doublet rises above the threshold.

    """
    settings = settings or LocateSettings.from_config()
    ta, tb = _times(a), _times(b)
    center, window = fine_window(ta, tb, settings)
    fine = cross_correlate(ta, tb, settings.fine_bin_ps, window)
    right, left, p_right, p_left = detect_doublet(fine, settings)
    logger.debug("Peaks at %.1f ps and %.1f ps (coarse center %.0f ps)", right, left, center)
    return PeakCandidates(
        tau_right_ps=right,
        tau_left_ps=left,
        prominence_right=p_right,
        prominence_left=p_left,
        fine_histogram=fine,
        coarse_center_ps=center,
    )


def normalize_g2(
    h: CorrelationHistogram, rate_a_hz: float, rate_b_hz: float
) -> npt.NDArray[np.float64]:
    """Normalize counts so that accidental coincidences average to 1.

    Raises:
        NormalizationUndefined: If a rate or the duration is not positive.

    """
    if rate_a_hz <= 0 or rate_b_hz <= 0 or h.duration_ps <= 0:
        raise NormalizationUndefined("g2 needs positive rates and duration")
    expected = rate_a_hz * rate_b_hz * (h.duration_ps / PS_PER_S) * (h.bin_width_ps / PS_PER_S)
    return np.asarray(h.counts, dtype=np.float64) / expected
