import json
import math

import numpy as np
import pytest

from app.clocksim import (
    ChannelModel,
    ChannelSegment,
    ClockModel,
    ClockOverflow,
    ConfigError,
    ExperimentConfig,
    SourceModel,
    clock_readings,
    delay_at,
    dump_experiment_config,
    experiment_config_from_mapping,
    load_experiment_config,
    local_clock_reading,
    sample_jitter,
    sample_pair_times,
    simulate_ensemble,
    simulate_two_party,
)
from app.peakfit import PeakShape
from app.utils.config_utils import PS_PER_S
from app.utils.types import JitterMode, Party


def test_clock_reading_exact():
    clock = ClockModel(b_ps=100.0, d=1e-9, a_per_s=1e-15)
    t = 10 * PS_PER_S
    # 10 s: d·t = 1e-9·1e13 = 10000 ps, a·t² = 1e-15·100 s = 0.1 ps
    assert local_clock_reading(clock, t) == t + 10_100


def test_clock_reading_overflow():
    with pytest.raises(ClockOverflow):
        local_clock_reading(ClockModel(b_ps=1e6), 2**63 - 10)


def test_clock_model_bounds():
    with pytest.raises(ConfigError):
        ClockModel(d=1e-6)
    with pytest.raises(ConfigError):
        ClockModel(a_per_s=1e-12)


def test_vectorized_readings_match_exact():
    clock = ClockModel(b_ps=-250.0, d=3e-8)
    t = np.array([0, PS_PER_S, 7 * PS_PER_S], dtype=np.int64)
    expected = [local_clock_reading(clock, int(x)) for x in t]
    assert clock_readings(clock, t).tolist() == expected


def test_phase_steps_apply_per_noise_block():
    t = np.array([0, PS_PER_S, 2 * PS_PER_S, 3 * PS_PER_S], dtype=np.int64)
    out = clock_readings(ClockModel(), t, np.array([5.0, -5.0]), noise_block_ps=2 * PS_PER_S)
    assert (out - t).tolist() == [5, 5, -5, -5]


def test_channel_schedule_lookup():
    channel = ChannelModel(
        (ChannelSegment(0, 10, 20), ChannelSegment(100, 30, 40)),
    )
    assert delay_at(channel, 0) == (10, 20)
    assert delay_at(channel, 99) == (10, 20)
    assert delay_at(channel, 100) == (30, 40)
    with pytest.raises(ConfigError):
        delay_at(channel, -1)


def test_channel_validation():
    with pytest.raises(ConfigError):
        ChannelModel((ChannelSegment(5, 0, 0),))
    with pytest.raises(ConfigError):
        ChannelModel((ChannelSegment(0, 0, 0), ChannelSegment(0, 1, 1)))
    with pytest.raises(ConfigError):
        ChannelModel((ChannelSegment(0, -1, 0),))
    with pytest.raises(ConfigError):
        ChannelModel(transmission_ab=1.5)


def test_channel_from_lengths():
    channel = ChannelModel.from_lengths([(0.0, 1.7), (60.0, 51.7)], v_mps=2.0e8)
    assert channel.length_based
    assert channel.labels == ["L=1.7m", "L=51.7m"]
    assert channel.schedule[0].delta_ab_ps == channel.schedule[0].delta_ba_ps == 8500
    assert channel.length_at(61 * PS_PER_S) == 51.7


def test_sample_pair_times_sorted_and_bounded():
    rng = np.random.default_rng(1)
    times = sample_pair_times(1000.0, 2 * PS_PER_S, rng)
    assert np.all(np.diff(times) >= 0)
    assert times.min() >= 0 and times.max() < 2 * PS_PER_S
    assert 1700 < len(times) < 2300
    assert len(sample_pair_times(0.0, PS_PER_S, rng)) == 0


def test_sample_jitter_is_centered():
    rng = np.random.default_rng(3)
    draws = sample_jitter(PeakShape(0.0, 290.0), rng, 20_000)
    assert abs(np.median(draws)) < 10.0
    assert np.std(draws) == pytest.approx(PeakShape().gaussian_sd_ps, rel=0.05)
    assert isinstance(sample_jitter(PeakShape(), rng), float)


def test_simulation_is_deterministic(short_experiment):
    a1, b1, _ = simulate_two_party(short_experiment)
    a2, b2, _ = simulate_two_party(short_experiment)
    assert a1 == a2 and b1 == b2
    a3, _, _ = simulate_two_party(short_experiment.with_seed(8))
    assert a3 != a1


def test_simulation_streams(short_run, short_experiment):
    a, b, truth = short_run
    assert a.party is Party.ALICE and b.party is Party.BOB
    assert a.epoch_info["duration_ps"] == short_experiment.duration_ps
    assert np.all(np.diff(a.times) >= 0) and np.all(np.diff(b.times) >= 0)
    # ~1300 detections per second per side
    for stream in (a, b):
        rate = len(stream) / 20.0
        assert 1100 < rate < 1500
    assert truth.detected_pairs["alice"] == pytest.approx(20 * 200, rel=0.15)


def test_zero_jitter_pairs_sit_exactly_on_peaks():
    config = ExperimentConfig(
        duration_ps=2 * PS_PER_S,
        seed=5,
        clock_b=ClockModel(b_ps=777.0),
        channel=ChannelModel((ChannelSegment(0, 4_000, 1_000),)),
        source_a=SourceModel(background_rate_hz=0.0, jitter=None),
        source_b=SourceModel(pair_rate_hz=0.0, background_rate_hz=0.0, jitter=None),
    )
    a, b, truth = simulate_two_party(config)
    diffs = set((b.times[:, None] - a.times[None, :]).ravel().tolist())
    tau_ab, _ = truth.expected_peaks(0)
    assert tau_ab == 777 + 4_000
    assert tau_ab in diffs


def test_ground_truth_offsets():
    config = ExperimentConfig(
        duration_ps=10 * PS_PER_S,
        clock_a=ClockModel(b_ps=10.0),
        clock_b=ClockModel(b_ps=50.0, d=1e-9),
    )
    _, _, truth = simulate_two_party(config)
    assert truth.offset_at(0) == pytest.approx(40.0)
    assert truth.offset_at(5 * PS_PER_S) == pytest.approx(5_040.0)
    blocks = truth.block_offsets(5 * PS_PER_S)
    assert [k for k, _ in blocks] == [0, 1]
    json.dumps(truth.to_dict())


def test_ensemble_matches_individual_runs(short_experiment):
    config = ExperimentConfig(duration_ps=PS_PER_S, channel=short_experiment.channel)
    runs = simulate_ensemble(config, [1, 2], workers=2)
    assert runs[1][0] == simulate_two_party(config.with_seed(2))[0]


def test_config_file_round_trip(tmp_path):
    config = ExperimentConfig(
        duration_ps=90 * PS_PER_S,
        seed=11,
        clock_b=ClockModel(b_ps=1e4, d=4.05e-11, white_phase_sigma_ps=51.0),
        channel=ChannelModel.from_lengths([(0.0, 1.7), (30.0, 6.7)]),
        source_a=SourceModel(jitter=None),
        jitter_mode=JitterMode.DETECTOR,
        detector_sigma_scale=0.6,
    )
    path = tmp_path / "experiment.env"
    path.write_text(dump_experiment_config(config))
    assert load_experiment_config(path) == config
    assert load_experiment_config(path, seed=3).seed == 3
    assert "DETECTOR_SIGMA_SCALE=0.6" in path.read_text().splitlines()


def test_config_file_delay_schedule():
    config = experiment_config_from_mapping(
        {"DURATION_S": "10", "CHANNEL_DELAYS": "0:1000:1000,5:41000:1000"}
    )
    assert [s.delta_ab_ps for s in config.channel.schedule] == [1000, 41000]
    assert config.channel.schedule[1].t_switch_ps == 5 * PS_PER_S
    assert not config.channel.length_based


def test_config_file_defaults():
    config = experiment_config_from_mapping({})
    assert config.duration_ps == 60 * PS_PER_S
    assert config.source_a.detected_pair_rate_hz == 200.0
    assert config.channel.labels == ["L=1.7m"]
    assert config.detector_sigma_scale == pytest.approx(1.0 / math.sqrt(2.0))


def test_config_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        experiment_config_from_mapping({"CONFIG_VERSION": "2"})
    with pytest.raises(ConfigError):
        experiment_config_from_mapping({"DURATION_S": "soon"})
    with pytest.raises(ConfigError):
        experiment_config_from_mapping({"CHANNEL_DELAYS": "0:1"})
    with pytest.raises(ConfigError):
        experiment_config_from_mapping({"DETECTOR_SIGMA_SCALE": "0"})
    with pytest.raises(ConfigError):
        load_experiment_config(tmp_path / "missing.env")
