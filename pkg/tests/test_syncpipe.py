import math

import numpy as np
import pandas as pd
import pytest

from app.clocksim import ChannelModel, ExperimentConfig
from app.peakfit import PeakShape, SyncEstimate
from app.syncpipe import (
    SERIES_COLUMNS,
    DegenerateDistances,
    InvalidModel,
    PrecisionModel,
    PrecisionPoint,
    RankDeficient,
    SeriesTooShort,
    SyncSeries,
    TrackingFailed,
    allan_deviation,
    asymmetry_bias,
    complete_blocks,
    delay_correlation,
    fit_drift,
    fit_precision_scaling,
    longest_contiguous_run,
    measure_precision,
    predict_precision,
    resolvable_length_m,
    segment_of_blocks,
    segment_summary,
    stability_report,
    swap_differences,
    time_deviation,
    track,
)
from app.tags import TagStream
from app.utils.config_utils import PS_PER_S
from app.utils.errors import DataError
from app.utils.types import Party
from tests.conftest import CHANNEL_DELAY_PS, SHORT_T_A_PS, TRUE_OFFSET_PS


def make_series(deltas, t_a_s=5.0, indices=None, sigma=1.0, round_trip=2e6):
    t_a_ps = int(t_a_s * PS_PER_S)
    indices = list(range(len(deltas))) if indices is None else list(indices)
    estimates = tuple(
        SyncEstimate(float(d), round_trip, sigma, k, k * t_a_ps + t_a_ps // 2)
        for k, d in zip(indices, deltas)
    )
    return SyncSeries(estimates, t_a_ps)


# -----------------------------
# Tracking
# -----------------------------
@pytest.fixture(scope="module")
def tracked(short_run):
    a, b, _ = short_run
    return track(a, b, SHORT_T_A_PS, workers=1)


def test_track_recovers_offset(tracked):
    assert len(tracked) == 4
    assert tracked.block_indices.tolist() == [0, 1, 2, 3]
    assert tracked.gaps == ()
    for est in tracked.estimates:
        assert abs(est.delta_ps - TRUE_OFFSET_PS) < 6 * est.sigma_delta_ps
        assert est.round_trip_ps == pytest.approx(2 * CHANNEL_DELAY_PS, abs=100.0)
        assert 1.0 < est.sigma_delta_ps < 30.0
    assert tracked.epochs_s.tolist() == [2.5, 7.5, 12.5, 17.5]


def test_track_with_workers_matches_serial(short_run, tracked):
    a, b, _ = short_run
    parallel = track(a, b, SHORT_T_A_PS, workers=3)
    assert parallel.deltas_ps.tolist() == tracked.deltas_ps.tolist()


def test_track_reports_one_sided_blocks(short_run):
    a, b, _ = short_run
    cut = 10 * PS_PER_S
    b_short = TagStream.from_times(
        Party.BOB, b.times[b.times < cut], epoch_info={"duration_ps": cut}
    )
    series = track(a, b_short, SHORT_T_A_PS)
    assert series.block_indices.tolist() == [0, 1]
    assert series.gaps == (2, 3)
    assert series.failures == {2: "MissingBlock", 3: "MissingBlock"}


def test_track_fails_on_background_only():
    rng = np.random.default_rng(21)
    duration = 10 * PS_PER_S
    info = {"duration_ps": duration}
    times_a = np.sort(rng.integers(0, duration, 5_000))
    a = TagStream.from_times(Party.ALICE, times_a, epoch_info=info)
    b = TagStream.from_times(Party.BOB, np.sort(rng.integers(0, duration, 5_000)), epoch_info=info)
    with pytest.raises(TrackingFailed, match="NoPeak"):
        track(a, b, SHORT_T_A_PS)


def test_track_fails_without_overlap():
    a = TagStream.from_times(Party.ALICE, [], epoch_info={"duration_ps": PS_PER_S})
    b = TagStream.from_times(Party.BOB, [], epoch_info={"duration_ps": PS_PER_S})
    with pytest.raises(TrackingFailed):
        track(a, b, SHORT_T_A_PS)


# -----------------------------
# Series frame
# -----------------------------
def test_complete_blocks_drops_negative_and_partial():
    stream = TagStream.from_times(Party.BOB, [-5, 3, 12, 25, 31], epoch_info={"duration_ps": 35})
    blocks = complete_blocks(stream, 10)
    assert sorted(blocks) == [0, 1, 2]
    assert blocks[2].tags.times.tolist() == [25]


def test_series_frame_round_trip():
    series = make_series([1.0, 2.0, 4.0], indices=[0, 1, 3])
    frame = series.to_frame()
    assert list(frame.columns) == SERIES_COLUMNS
    back = SyncSeries.from_frame(frame)
    assert back.t_a_ps == 5 * PS_PER_S
    assert back.gaps == (2,)
    assert back.deltas_ps.tolist() == [1.0, 2.0, 4.0]
    assert back.block_indices.tolist() == [0, 1, 3]


def test_series_frame_errors():
    with pytest.raises(DataError):
        SyncSeries.from_frame(pd.DataFrame({"block_index": [0]}))
    with pytest.raises(SeriesTooShort):
        SyncSeries.from_frame(pd.DataFrame(columns=SERIES_COLUMNS))


def test_series_negated_and_labels():
    series = make_series([3.0, -1.0])
    assert series.negated().deltas_ps.tolist() == [-3.0, 1.0]
    assert series.with_labels(["x", "y"]).to_frame()["segment_label"].tolist() == ["x", "y"]
    with pytest.raises(ValueError):
        series.with_labels(["x"])


# -----------------------------
# Drift
# -----------------------------
def test_fit_drift_recovers_parabola():
    a, d, b = 1e-15, 4.05e-11, 1_000.0
    t = (np.arange(90) + 0.5) * 20.0
    deltas = a * PS_PER_S * t * t + d * PS_PER_S * t + b
    fit = fit_drift(make_series(deltas, t_a_s=20.0))
    assert fit.a_per_s == pytest.approx(a, rel=1e-6)
    assert fit.d == pytest.approx(d, rel=1e-6)
    assert fit.b_ps == pytest.approx(b, abs=1e-3)
    assert np.max(np.abs(fit.residuals_ps)) < 1e-4
    assert fit.predict_ps([10.0]) == pytest.approx([a * PS_PER_S * 100 + d * PS_PER_S * 10 + b])


def test_fit_drift_weighted_uncertainties():
    rng = np.random.default_rng(5)
    t = (np.arange(60) + 0.5) * 20.0
    deltas = 4.05e-11 * PS_PER_S * t + rng.normal(0.0, 51.0, len(t))
    fit = fit_drift(make_series(deltas, t_a_s=20.0, sigma=51.0), weighted=True)
    assert fit.weighted
    assert abs(fit.d - 4.05e-11) < 5 * fit.sigma_d
    assert fit.to_dict()["n_points"] == 60


def test_fit_drift_errors():
    with pytest.raises(SeriesTooShort):
        fit_drift(make_series([1.0, 2.0]))
    same_epoch = make_series([1.0, 2.0, 3.0], indices=[4, 4, 4])
    with pytest.raises(RankDeficient):
        fit_drift(same_epoch)
    with pytest.raises(DataError):
        fit_drift(make_series([1.0, 2.0, 3.0], sigma=0.0), weighted=True)


# -----------------------------
# Stability
# -----------------------------
def test_white_phase_noise_deviations():
    rng = np.random.default_rng(1)
    sigma = 50.0
    x = rng.normal(0.0, sigma, 8_000)
    assert allan_deviation(x, 20.0, 1) == pytest.approx(
        math.sqrt(3.0) * sigma / 20.0 / PS_PER_S, rel=0.05
    )
    assert time_deviation(x, 20.0, 1) == pytest.approx(sigma, rel=0.05)
    assert time_deviation(x, 20.0, 4) == pytest.approx(sigma / 2.0, rel=0.08)


def test_ramp_has_zero_deviation():
    x = 3.0 * np.arange(50) + 7.0
    assert allan_deviation(x, 1.0, 2) == pytest.approx(0.0, abs=1e-20)
    assert time_deviation(x, 1.0, 2) == pytest.approx(0.0, abs=1e-9)


def test_deviation_needs_enough_points():
    with pytest.raises(SeriesTooShort):
        allan_deviation([1.0, 2.0], 1.0, 1)
    with pytest.raises(SeriesTooShort):
        time_deviation([1.0, 2.0, 3.0], 1.0, 1)


def test_deviation_at_minimum_length():
    # one second difference at m=2: 8 - 2*5 + 0 = -2
    x = [0.0, 1.0, 5.0, 2.0, 8.0]
    assert allan_deviation(x, 1.0, 2) == pytest.approx(math.sqrt(2.0) / 2.0 / PS_PER_S)
    # second differences 3 and -7
    assert time_deviation(x[:4], 1.0, 1) == pytest.approx(math.sqrt(29.0 / 6.0))


def test_stability_report_reaches_single_term_adev():
    rng = np.random.default_rng(4)
    drift = fit_drift(make_series(rng.normal(0.0, 20.0, 9), t_a_s=2.0))
    report = stability_report(drift, 2.0)
    assert report.n_points == 9
    assert [tau for tau, _ in report.adev] == [2.0, 4.0, 8.0]
    assert [tau for tau, _ in report.tdev] == [2.0, 4.0]
    assert all(np.isfinite(value) and value >= 0.0 for _, value in report.adev)


def test_longest_contiguous_run():
    assert longest_contiguous_run([0, 1, 2, 5, 6, 7, 8, 10]) == slice(3, 7)
    assert longest_contiguous_run([]) == slice(0, 0)
    assert longest_contiguous_run([4]) == slice(0, 1)


def test_stability_report_uses_longest_run():
    rng = np.random.default_rng(2)
    indices = list(range(5)) + list(range(7, 40))
    deltas = rng.normal(0.0, 20.0, len(indices))
    drift = fit_drift(make_series(deltas, t_a_s=2.0, indices=indices))
    report = stability_report(drift, 2.0)
    assert report.n_points == 33
    assert [tau for tau, _ in report.adev] == [2.0, 4.0, 8.0, 16.0, 32.0]
    assert [tau for tau, _ in report.tdev] == [2.0, 4.0, 8.0, 16.0]
    assert set(report.to_dict()) == {"adev", "tdev", "residual_std_ps", "n_points"}


def test_stability_report_too_short():
    drift = fit_drift(make_series([0.0, 5.0, 1.0, 9.0, 2.0], indices=[0, 1, 2, 5, 6]))
    with pytest.raises(SeriesTooShort):
        stability_report(drift, 5.0)


# -----------------------------
# Precision
# -----------------------------
def test_predict_precision():
    model = PrecisionModel(1.65, 200.0, 100.0)
    assert predict_precision(model) == pytest.approx(1.5152, rel=1e-3)
    four_times = PrecisionModel(1.65, 200.0, 400.0)
    assert predict_precision(four_times) == pytest.approx(predict_precision(model) / 2)


def test_resolvable_length():
    # 10 ps at 2.04e8 m/s over the one-way path: 1.02 mm
    assert resolvable_length_m(10.0) == pytest.approx(1.02e-3)
    assert resolvable_length_m(10.0, v_mps=3e8) == pytest.approx(1.5e-3)


def test_precision_model_rejects_non_positive():
    with pytest.raises(InvalidModel):
        PrecisionModel(1.65, 0.0, 1.0)


def test_fit_precision_scaling_exact_points():
    rate = 200.0
    points = [
        PrecisionPoint(t, 10, 20.0 / math.sqrt(rate * t), float("nan")) for t in (1.0, 5.0, 20.0)
    ]
    scaling = fit_precision_scaling(points, rate, PeakShape())
    assert scaling.c_ps == pytest.approx(20.0)
    assert scaling.c_err_ps == pytest.approx(0.0, abs=1e-9)
    assert scaling.predicted_c_ps == pytest.approx(1000.0 / (2 * math.sqrt(2) * 1.51532), rel=1e-4)
    assert scaling.implied_v0_per_ns == pytest.approx(1000.0 / (2 * math.sqrt(2) * 20.0))
    with pytest.raises(SeriesTooShort):
        fit_precision_scaling([PrecisionPoint(1.0, 1, float("nan"), 1.0)], rate)


def test_measure_precision_small_ensemble():
    experiment = ExperimentConfig(
        duration_ps=10 * PS_PER_S, channel=ChannelModel.symmetric(CHANNEL_DELAY_PS)
    )
    points = measure_precision(experiment, [5.0], seeds=[1, 2])
    assert len(points) == 1
    point = points[0]
    assert point.n_blocks == 4
    assert 0.0 < point.std_delta_ps < 50.0
    assert point.predicted_ps == pytest.approx(
        predict_precision(PrecisionModel.from_shape(PeakShape(), 200.0, 5.0))
    )


# -----------------------------
# Delay attacks
# -----------------------------
def test_asymmetry_bias():
    assert asymmetry_bias(40_000, 0) == -20_000.0
    assert asymmetry_bias(5_000, 5_000) == 0.0
    with pytest.raises(ValueError):
        asymmetry_bias(-1, 0)


def test_delay_correlation_slope():
    lengths = [1.7, 1.7, 6.7, 6.7, 31.7, 51.7]
    series = make_series([3.0 * length + 5.0 for length in lengths])
    corr = delay_correlation(series, lengths)
    assert corr.slope_ps_per_m == pytest.approx(3.0)
    assert corr.intercept_ps == pytest.approx(5.0)
    assert not corr.consistent_with_zero()


def test_delay_correlation_flat_is_consistent_with_zero():
    rng = np.random.default_rng(3)
    lengths = np.repeat([1.7, 6.7, 31.7, 51.7], 10)
    residuals = rng.normal(0.0, 5.0, len(lengths))
    corr = delay_correlation(make_series(np.zeros(len(lengths))), lengths, residuals)
    assert corr.consistent_with_zero(n_sigma=4.0)


def test_delay_correlation_errors():
    series = make_series([1.0, 2.0])
    with pytest.raises(DegenerateDistances):
        delay_correlation(series, [5.0, 5.0])
    with pytest.raises(ValueError):
        delay_correlation(series, [5.0])


def test_segments_and_swaps():
    channel = ChannelModel.from_lengths([(0.0, 1.7), (10.0, 6.7)])
    series = make_series([10.0, 12.0, 50.0, 30.0], t_a_s=4.0)
    labels, lengths = segment_of_blocks(series, channel)
    assert labels == ["L=1.7m", "L=1.7m", "transition", "L=6.7m"]
    assert lengths == [1.7, 1.7, None, 6.7]

    rows = segment_summary(series, channel)
    assert [r["blocks"] for r in rows] == [2, 1]
    assert rows[0]["mean_delta_ps"] == 11.0
    assert rows[0]["stderr_delta_ps"] == pytest.approx(1.0)
    assert math.isnan(rows[1]["stderr_delta_ps"])
    assert rows[1]["t_end_s"] == 16.0
    assert rows[0]["asymmetry_bias_ps"] == 0.0

    swaps = swap_differences(rows)
    assert len(swaps) == 1
    assert swaps[0]["from"] == "L=1.7m" and swaps[0]["to"] == "L=6.7m"
    assert swaps[0]["delta_change_ps"] == 19.0
