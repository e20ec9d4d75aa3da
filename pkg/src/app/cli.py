"""Command-line front end.

Every subcommand writes `manifest.json` into its output directory before any
other output. Errors are reported on standard error as::

    pairsync:error:<exit code>:<ExceptionName>: <message>
"""

from __future__ import annotations

import argparse
import asyncio
import sys
from collections.abc import Callable, Sequence
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, NoReturn

import numpy as np
import pandas as pd

from app import config
from app.clocksim import (
    ExperimentConfig,
    dump_experiment_config,
    experiment_config_from_mapping,
    load_experiment_config,
    simulate_two_party,
)
from app.output_handler import ArtifactWriter
from app.pairwire import SessionConfig, SessionResult, connect_session, serve_session
from app.peakfit import PeakShape
from app.syncpipe import (
    PrecisionModel,
    SyncSeries,
    TrackingFailed,
    delay_correlation,
    fit_drift,
    fit_precision_scaling,
    measure_precision,
    predict_precision,
    resolvable_length_m,
    segment_of_blocks,
    segment_summary,
    stability_report,
    swap_differences,
    track,
)
from app.tags import TagStream, read_tag_file
from app.utils.config_utils import PS_PER_S, seconds_to_ps
from app.utils.errors import AnalysisError, DataError, PairSyncError, UsageError
from app.utils.metrics_server import start_metrics_server
from app.utils.setup_logger import setup_logger
from app.utils.types import ExitCode, Party
from app.xcorr import LocateSettings, cross_correlate, fine_window, normalize_g2

logger = setup_logger(__name__)

PROG = "pairsync"
DEFAULT_PRECISION_TA_S = "1,5,20,100"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def _address(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise argparse.ArgumentTypeError(f"expected HOST:PORT, got {value!r}")
    return host or "127.0.0.1", int(port)


def _seconds_list(value: str) -> list[float]:
    try:
        out = [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated seconds, got {value!r}")
    if not out or min(out) <= 0:
        raise argparse.ArgumentTypeError("acquisition times must be positive")
    return out


def build_parser() -> argparse.ArgumentParser:
    """Argument parser for all subcommands."""
    parser = _Parser(prog=PROG, description="Two-party clock synchronization with photon pairs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p: argparse.ArgumentParser, experiment: bool = True) -> None:
        p.add_argument("--out", required=True, help="output directory")
        if experiment:
            p.add_argument("--config", help="experiment file (KEY=VALUE)")
            p.add_argument("--seed", type=int, help="overrides SEED of the experiment file")

    def tagged(p: argparse.ArgumentParser) -> None:
        p.add_argument("alice", help="Alice's PTAG file")
        p.add_argument("bob", help="Bob's PTAG file")
        p.add_argument("--bin-ps", type=int, help="fine histogram bin width in ps")
        p.add_argument("--duration", type=float, help="session length in s")

    p = sub.add_parser("simulate", help="simulate a two-party run")
    common(p)

    p = sub.add_parser("correlate", help="fine cross-correlation histogram")
    common(p)
    tagged(p)

    p = sub.add_parser("track", help="offset series from two tag files")
    common(p)
    tagged(p)
    p.add_argument("--ta", type=float, help="acquisition time per block in s")
    p.add_argument("--workers", type=int, help="worker threads")

    p = sub.add_parser("drift", help="drift fit and stability of a series")
    common(p, experiment=False)
    p.add_argument("series", help="series CSV written by track")
    p.add_argument("--weighted", action="store_true", help="weight blocks by 1/sigma^2")

    p = sub.add_parser("attack", help="simulate a delay schedule and analyze it")
    common(p)
    p.add_argument("--ta", type=float, help="acquisition time per block in s")
    p.add_argument("--bin-ps", type=int, help="fine histogram bin width in ps")

    for name, flag in (("serve", "--listen"), ("connect", "--peer")):
        p = sub.add_parser(name, help=f"live session ({'listen' if name == 'serve' else 'dial'})")
        common(p, experiment=False)
        p.add_argument("tags", help="local PTAG file")
        p.add_argument("--role", choices=["alice", "bob"], required=True)
        p.add_argument(flag, dest="address", type=_address, help="HOST:PORT")
        p.add_argument("--ta", type=float, help="acquisition time per block in s")
        p.add_argument("--key-hex", help="shared key, 64 hex digits (default PAIRSYNC_KEY_HEX)")
        p.add_argument("--bin-ps", type=int, help="fine histogram bin width in ps")

    p = sub.add_parser("precision", help="predicted (and measured) offset precision")
    common(p)
    p.add_argument("--rate", type=float, default=200.0, help="detected pair rate in 1/s")
    p.add_argument("--ta-list", type=_seconds_list, default=_seconds_list(DEFAULT_PRECISION_TA_S))
    p.add_argument("--measure-seeds", type=int, default=0, help="simulate this many seeds")
    p.add_argument("--workers", type=int, default=1)
    return parser


# -----------------------------
# Helpers
# -----------------------------
def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        return load_experiment_config(args.config, args.seed)
    base = experiment_config_from_mapping({})
    return base.with_seed(args.seed) if args.seed is not None else base


def _t_a_ps(args: argparse.Namespace) -> int:
    if getattr(args, "ta", None) is None:
        return config.get_block_duration_ps()
    if args.ta <= 0:
        raise UsageError("--ta must be positive")
    return seconds_to_ps(args.ta)


def _settings(args: argparse.Namespace, shape: PeakShape) -> LocateSettings:
    settings = replace(LocateSettings.from_config(), shape=shape)
    if getattr(args, "bin_ps", None) is not None:
        if args.bin_ps <= 0:
            raise UsageError("--bin-ps must be positive")
        settings = replace(settings, fine_bin_ps=args.bin_ps)
    return settings


def _load_pair(args: argparse.Namespace) -> tuple[TagStream, TagStream]:
    duration = None
    if args.duration is not None:
        duration = seconds_to_ps(args.duration)
    elif args.config:
        duration = load_experiment_config(args.config).duration_ps
    streams = []
    for path in (args.alice, args.bob):
        stream = read_tag_file(path)
        if duration is not None:
            stream = replace(stream, epoch_info={"duration_ps": duration})
        streams.append(stream)
    return streams[0], streams[1]


def _writer(args: argparse.Namespace, argv: Sequence[str], **settings: Any) -> ArtifactWriter:
    return ArtifactWriter(
        args.out,
        args.command,
        argv,
        config_path=getattr(args, "config", None),
        seed=getattr(args, "seed", None),
        settings=settings,
    )


# -----------------------------
# Subcommands
# -----------------------------
def cmd_simulate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    experiment = _experiment(args)
    out = _writer(args, argv, seed=experiment.seed, duration_ps=experiment.duration_ps)
    out.write_manifest(["alice.ptag", "bob.ptag", "truth.json", "config.env"])
    stream_a, stream_b, truth = simulate_two_party(experiment)
    out.write_tags("alice.ptag", stream_a)
    out.write_tags("bob.ptag", stream_b)
    out.write_json("truth.json", truth.to_dict())
    out.write_text("config.env", dump_experiment_config(experiment))
    return ExitCode.OK


def cmd_correlate(args: argparse.Namespace, argv: Sequence[str]) -> int:
    settings = _settings(args, PeakShape.from_config())
    out = _writer(
        args,
        argv,
        fine_bin_ps=settings.fine_bin_ps,
        fine_half_window_ps=settings.fine_half_window_ps,
        coarse_bin_ps=settings.coarse_bin_ps,
    )
    out.write_manifest(["histogram.csv"])
    a, b = _load_pair(args)
    center, window = fine_window(a, b, settings)
    fine = cross_correlate(a, b, settings.fine_bin_ps, window, duration_ps=a.end_ps())
    seconds = fine.duration_ps / PS_PER_S
    g2 = None
    if seconds > 0:
        g2 = normalize_g2(fine, len(a) / seconds, len(b) / seconds)
    out.write_csv("histogram.csv", fine.to_frame(g2))
    logger.info("📊 Fine histogram around %.0f ps: %d coincidences", center, fine.total)
    return ExitCode.OK


def cmd_track(args: argparse.Namespace, argv: Sequence[str]) -> int:
    t_a_ps = _t_a_ps(args)
    shape = PeakShape.from_config()
    settings = _settings(args, shape)
    out = _writer(args, argv, t_a_ps=t_a_ps, fine_bin_ps=settings.fine_bin_ps)
    out.write_manifest(["series.csv"])
    a, b = _load_pair(args)
    series = track(a, b, t_a_ps, shape, settings, workers=args.workers)
    if args.config:
        labels, _ = segment_of_blocks(series, load_experiment_config(args.config).channel)
        series = series.with_labels(labels)
    out.write_csv("series.csv", series.to_frame())
    return ExitCode.OK


def cmd_drift(args: argparse.Namespace, argv: Sequence[str]) -> int:
    out = _writer(args, argv, weighted=args.weighted)
    out.write_manifest(["drift.json", "stability.json"])
    path = Path(args.series)
    if not path.is_file():
        raise DataError(f"series file not found: {path}")
    try:
        frame = pd.read_csv(path)
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as exc:
        raise DataError(f"unreadable series file: {exc}") from exc
    series = SyncSeries.from_frame(frame)
    drift = fit_drift(series, weighted=args.weighted)
    out.write_json("drift.json", drift.to_dict())
    out.write_json("stability.json", stability_report(drift, series.t_a_ps / PS_PER_S).to_dict())
    return ExitCode.OK


def _attack_report(
    series: SyncSeries, experiment: ExperimentConfig, t_a_ps: int
) -> tuple[SyncSeries, dict[str, Any]]:
    channel = experiment.channel
    labels, lengths = segment_of_blocks(series, channel)
    series = series.with_labels(labels)
    rows = segment_summary(series, channel, experiment.duration_ps)
    report: dict[str, Any] = {
        "t_a_ps": t_a_ps,
        "segments": [dict(r) for r in rows],
        "swaps": swap_differences(rows),
        "gaps": list(series.gaps),
        "failures": {str(k): v for k, v in series.failures.items()},
        "delay_correlation": None,
        "delay_correlation_residuals": None,
        "drift": None,
        "stability": None,
    }
    drift = None
    try:
        drift = fit_drift(series)
        report["drift"] = drift.to_dict()
        report["stability"] = stability_report(drift, t_a_ps / PS_PER_S).to_dict()
    except PairSyncError as exc:
        logger.warning("⚠️ Drift/stability skipped: %s", exc)

    keep = [i for i, length in enumerate(lengths) if length is not None]
    if channel.length_based and keep:
        dist = np.array([lengths[i] for i in keep], dtype=np.float64)
        sub = replace(series, estimates=tuple(series.estimates[i] for i in keep), segment_labels=())
        try:
            corr = delay_correlation(sub, dist)
            report["delay_correlation"] = {
                **asdict(corr),
                "consistent_with_zero_3sigma": corr.consistent_with_zero(),
            }
            if drift is not None:
                corr = delay_correlation(sub, dist, drift.residuals_ps[keep])
                report["delay_correlation_residuals"] = {
                    **asdict(corr),
                    "consistent_with_zero_3sigma": corr.consistent_with_zero(),
                }
        except PairSyncError as exc:
            logger.warning("⚠️ Delay correlation skipped: %s", exc)
    return series, report


def cmd_attack(args: argparse.Namespace, argv: Sequence[str]) -> int:
    experiment = _experiment(args)
    t_a_ps = _t_a_ps(args)
    shape = experiment.source_a.jitter or PeakShape.from_config()
    settings = _settings(args, shape)
    out = _writer(args, argv, seed=experiment.seed, t_a_ps=t_a_ps)
    out.write_manifest(["series.csv", "attack.json"])
    stream_a, stream_b, truth = simulate_two_party(experiment)
    series = track(stream_a, stream_b, t_a_ps, shape, settings)
    series, report = _attack_report(series, experiment, t_a_ps)
    report["truth"] = truth.to_dict()
    out.write_csv("series.csv", series.to_frame())
    out.write_json("attack.json", report)
    return ExitCode.OK


def _session(args: argparse.Namespace, argv: Sequence[str]) -> int:
    role = Party.ALICE if args.role == "alice" else Party.BOB
    shape = PeakShape.from_config()
    overrides: dict[str, Any] = {"shape": shape, "settings": _settings(args, shape)}
    if args.address is not None:
        overrides["host"], overrides["port"] = args.address
    cfg = SessionConfig.from_config(role, _t_a_ps(args), args.key_hex, **overrides)
    out = _writer(args, argv, **cfg.to_log_dict())
    out.write_manifest(["series.csv", "session.json", "peer.ptag"])
    local = read_tag_file(args.tags)
    start_metrics_server()

    if args.command == "serve":
        result: SessionResult = asyncio.run(serve_session(cfg, local))
    else:
        result = asyncio.run(connect_session(cfg, local))

    out.write_tags("peer.ptag", result.peer_stream)
    out.write_csv("series.csv", result.series.to_frame())
    out.write_json(
        "session.json",
        {
            "role": result.role.name.lower(),
            "estimates": len(result.series),
            "gaps": list(result.series.gaps),
            "failures": {str(k): v for k, v in result.series.failures.items()},
            "late_frames": result.late_frames,
            "peer_completed": result.peer_completed,
            "peer_estimates": len(result.peer_estimates),
        },
    )
    if not len(result.series):
        raise TrackingFailed("session ended without a single estimate")
    return ExitCode.OK


def cmd_precision(args: argparse.Namespace, argv: Sequence[str]) -> int:
    shape = PeakShape.from_config()
    out = _writer(
        args, argv, rate_hz=args.rate, t_a_s=args.ta_list, f=shape.f, sigma_ps=shape.sigma_ps
    )
    measuring = args.measure_seeds > 0
    out.write_manifest(["precision.csv", "precision_fit.json"] if measuring else ["precision.csv"])
    frame = pd.DataFrame(
        {
            "t_a_s": args.ta_list,
            "rate_hz": args.rate,
            "predicted_ps": [
                predict_precision(PrecisionModel.from_shape(shape, args.rate, t))
                for t in args.ta_list
            ],
        }
    )
    frame["resolvable_length_m"] = [resolvable_length_m(p) for p in frame["predicted_ps"]]
    if measuring:
        experiment = _experiment(args)
        shape = experiment.source_a.jitter or shape
        points = measure_precision(
            experiment, args.ta_list, list(range(args.measure_seeds)), shape, workers=args.workers
        )
        frame["measured_std_ps"] = [p.std_delta_ps for p in points]
        frame["n_blocks"] = [p.n_blocks for p in points]
        rate = experiment.source_a.detected_pair_rate_hz * experiment.channel.transmission_ab
        scaling = fit_precision_scaling(points, rate, shape)
        out.write_json("precision_fit.json", {**asdict(scaling), "ratio": scaling.ratio})
    out.write_csv("precision.csv", frame)
    return ExitCode.OK


COMMANDS: dict[str, Callable[[argparse.Namespace, Sequence[str]], int]] = {
    "simulate": cmd_simulate,
    "correlate": cmd_correlate,
    "track": cmd_track,
    "drift": cmd_drift,
    "attack": cmd_attack,
    "serve": _session,
    "connect": _session,
    "precision": cmd_precision,
}


def exit_code_for(exc: BaseException) -> ExitCode:
    """Exit code of an error raised by a subcommand."""
    if isinstance(exc, UsageError):
        return ExitCode.USAGE
    if isinstance(exc, AnalysisError):
        return ExitCode.ANALYSIS
    return ExitCode.DATA


def report_error(exc: BaseException, code: int) -> None:
    print(f"{PROG}:error:{int(code)}:{type(exc).__name__}: {exc}", file=sys.stderr)


def dispatch(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand and return its exit code.

    Args:
        argv (Optional[Sequence[str]]): Arguments without the program name.

    Returns:
        int: 0 success, 1 usage error, 2 data error, 3 analysis failure.

    """
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return int(COMMANDS[args.command](args, argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    except PairSyncError as exc:
        code = exit_code_for(exc)
        report_error(exc, code)
        return int(code)
    except (OSError, ValueError) as exc:
        logger.debug("Data error", exc_info=True)
        report_error(exc, ExitCode.DATA)
        return int(ExitCode.DATA)
