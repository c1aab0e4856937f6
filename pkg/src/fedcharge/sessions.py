"""Domain types for charging sessions and the session-retention rules.

All types are immutable after construction; the operations here are pure
functions, safe to call from multiple threads.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone


def parse_utc(text: str) -> datetime:
    """Parse an ISO-8601 timestamp, normalize to UTC, truncate to seconds."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    dt = datetime.fromisoformat(raw)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc).replace(microsecond=0)


def format_utc(dt: datetime) -> str:
    """Render a UTC timestamp as YYYY-MM-DDTHH:MM:SSZ."""
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True, slots=True)
class SessionRecord:
    """One charging session: metadata, optional user inputs, target energy."""

    session_id: str
    site_id: str
    station_id: str
    connection_time: datetime
    disconnect_time: datetime | None = None
    delivered_energy_kwh: float | None = None
    requested_energy_kwh: float | None = None
    available_minutes: float | None = None
    requested_departure: datetime | None = None

    def __post_init__(self):
        if not self.session_id:
            raise ValueError("session_id must be nonempty")
        if self.delivered_energy_kwh is not None and self.delivered_energy_kwh < 0:
            raise ValueError(f"delivered_energy_kwh < 0 for {self.session_id}")
        if self.requested_energy_kwh is not None and self.requested_energy_kwh < 0:
            raise ValueError(f"requested_energy_kwh < 0 for {self.session_id}")
        if self.available_minutes is not None and self.available_minutes < 0:
            raise ValueError(f"available_minutes < 0 for {self.session_id}")
        if (
            self.disconnect_time is not None
            and self.disconnect_time < self.connection_time
        ):
            raise ValueError(f"disconnect before connection for {self.session_id}")


@dataclass(frozen=True, slots=True)
class TimeSeriesSample:
    """One timestamped (current, pilot) observation; at least one signal present."""

    session_id: str
    timestamp: datetime
    current_a: float | None = None
    pilot_a: float | None = None

    def __post_init__(self):
        if self.current_a is None and self.pilot_a is None:
            raise ValueError(
                f"sample for {self.session_id} carries neither current nor pilot"
            )


@dataclass(frozen=True, slots=True)
class DatasetConfig:
    """Early-window length, retention floor, and the nominal voltage constant."""

    early_window_minutes: float = 10.0
    min_early_current_samples: int = 5
    nominal_voltage_v: float = 208.0

    def __post_init__(self):
        if self.early_window_minutes <= 0:
            raise ValueError("early_window_minutes must be positive")
        if self.min_early_current_samples <= 0:
            raise ValueError("min_early_current_samples must be positive")
        if self.nominal_voltage_v <= 0:
            raise ValueError("nominal_voltage_v must be positive")


# Index built by the ingestion parser: per-session samples sorted ascending,
# timestamps unique after last-write-wins merging.
SeriesIndex = dict[str, list[TimeSeriesSample]]


def early_window_samples(
    session: SessionRecord,
    samples: list[TimeSeriesSample],
    cfg: DatasetConfig,
) -> list[TimeSeriesSample]:
    """Samples inside the closed interval [t_conn, t_conn + W].

    `samples` must be sorted ascending by timestamp. Samples strictly before
    connection (clock skew in real telemetry) fall outside the interval and
    are excluded.
    """
    t0 = session.connection_time
    t1 = t0 + timedelta(minutes=cfg.early_window_minutes)
    keys = [s.timestamp for s in samples]
    lo = bisect_left(keys, t0)
    hi = bisect_right(keys, t1)
    return samples[lo:hi]


def count_early_current(
    session: SessionRecord, samples: list[TimeSeriesSample], cfg: DatasetConfig
) -> int:
    return sum(
        1 for s in early_window_samples(session, samples, cfg) if s.current_a is not None
    )


# Drop-reason keys used in the retention tally.
DROP_MISSING_SERIES = "missing_series"
DROP_MISSING_TARGET = "missing_target"
DROP_FEW_EARLY_CURRENT = "insufficient_early_current"


@dataclass(frozen=True)
class RetentionResult:
    """Retained sessions (input order preserved) plus the drop-reason tally."""

    sessions: list[SessionRecord]
    dropped: Counter = field(default_factory=Counter)


def retain_sessions(
    sessions: list[SessionRecord],
    series: SeriesIndex,
    cfg: DatasetConfig,
) -> RetentionResult:
    """Keep sessions that exist in both sources, have a target, and carry at
    least cfg.min_early_current_samples current readings in the early window.
    """
    kept: list[SessionRecord] = []
    dropped: Counter = Counter()
    for session in sessions:
        samples = series.get(session.session_id)
        if not samples:
            dropped[DROP_MISSING_SERIES] += 1
            continue
        if session.delivered_energy_kwh is None:
            dropped[DROP_MISSING_TARGET] += 1
            continue
        if count_early_current(session, samples, cfg) < cfg.min_early_current_samples:
            dropped[DROP_FEW_EARLY_CURRENT] += 1
            continue
        kept.append(session)
    return RetentionResult(sessions=kept, dropped=dropped)
