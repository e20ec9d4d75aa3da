"""Prometheus metric definitions for tracking and the wire session.

Exports counters and histograms for:
- Block tracking outcomes and fit duration
- Frames exchanged over the classical channel
- Authentication failures and late frames
"""

import re

from prometheus_client import REGISTRY, Counter, Gauge, Histogram, generate_latest


def get_prometheus_metrics() -> str:
    """Return all registered Prometheus metrics as a text payload."""
    return generate_latest(REGISTRY).decode("utf-8")


def _sanitize_label(value: str) -> str:
    """Sanitize a string to be a Prometheus-compatible label.

    Args:
        value (str): The input string to sanitize.

    Returns:
        str: Sanitized label safe for Prometheus use.

    """
    return re.sub(r"[^\w\-:.]", "_", value)[:64]


# -----------------------------
# Tracking Metrics
# -----------------------------
blocks_total = Counter(
    "pairsync_blocks_total",
    "Blocks processed by the tracking pipeline, by outcome.",
    ["outcome"],
)

block_duration = Histogram(
    "pairsync_block_duration_seconds",
    "Time taken to locate, fit and estimate one block.",
    buckets=[0.005, 0.01, 0.05, 0.1, 0.5, 1, 5],
)

last_offset_ps = Gauge(
    "pairsync_last_offset_ps",
    "Most recent clock offset estimate in picoseconds.",
)


def record_block_metrics(outcome: str, duration_sec: float, delta_ps: float | None = None) -> None:
    """Record one processed block.

    Args:
        outcome (str): "ok", or the failure exception name.
        duration_sec (float): Wall time spent on the block.
        delta_ps (Optional[float]): Offset estimate when the block succeeded.

    """
    blocks_total.labels(outcome=_sanitize_label(outcome)).inc()
    block_duration.observe(duration_sec)
    if delta_ps is not None:
        last_offset_ps.set(delta_ps)


# -----------------------------
# Wire Session Metrics
# -----------------------------
frames_total = Counter(
    "pairsync_frames_total",
    "Frames exchanged over the classical channel.",
    ["direction", "frame_type"],
)

auth_failures_total = Counter(
    "pairsync_auth_failures_total",
    "Frames rejected because the authentication tag did not verify.",
)

late_frames_total = Counter(
    "pairsync_late_frames_total",
    "BLOCK frames dropped because their block was already finalized.",
)


def record_frame_metrics(direction: str, frame_type: str) -> None:
    """Count one frame sent or received."""
    frames_total.labels(
        direction=_sanitize_label(direction), frame_type=_sanitize_label(frame_type)
    ).inc()


def record_auth_failure() -> None:
    """Count one authentication failure."""
    auth_failures_total.inc()


def record_late_frame() -> None:
    """Count one late BLOCK frame."""
    late_frames_total.inc()
