"""File ingestion and deterministic synthetic depots.

Two interchangeable on-disk formats carry the same field names: CSV with a
header row, and JSON lines with one object per line. An empty CSV cell or a
JSON null means the field is absent.

sessions files:   session_id,site_id,station_id,connection_time,
                  disconnect_time,delivered_energy_kwh,requested_energy_kwh,
                  available_minutes,requested_departure
timeseries files: session_id,timestamp,current_a,pilot_a

Timestamps are ISO-8601 UTC (YYYY-MM-DDTHH:MM:SSZ). Parsing is lenient by
default: malformed rows are skipped and reported with their line number;
strict mode aborts on the first bad row.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .seeding import STREAM_SYNTH, rng_from
from .sessions import (
    SeriesIndex,
    SessionRecord,
    TimeSeriesSample,
    format_utc,
    parse_utc,
)

SESSION_COLUMNS = [
    "session_id",
    "site_id",
    "station_id",
    "connection_time",
    "disconnect_time",
    "delivered_energy_kwh",
    "requested_energy_kwh",
    "available_minutes",
    "requested_departure",
]
TIMESERIES_COLUMNS = ["session_id", "timestamp", "current_a", "pilot_a"]


class ParseError(ValueError):
    """Malformed row in strict mode; carries the offending line number."""

    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


@dataclass
class SessionParseResult:
    records: list[SessionRecord]
    issues: list[tuple[int, str]] = field(default_factory=list)


@dataclass
class TimeSeriesParseResult:
    index: SeriesIndex
    issues: list[tuple[int, str]] = field(default_factory=list)
    n_negative_clamped: int = 0
    n_duplicates_merged: int = 0


def _iter_rows(path: Path):
    """Yield (line_number, field dict) rows from a CSV or JSON-lines file."""
    suffix = path.suffix.lower()
    if suffix == ".csv":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for lineno, row in enumerate(reader, start=2):
                yield lineno, {k: v for k, v in row.items() if v not in (None, "")}
    elif suffix in (".jsonl", ".ndjson", ".json"):
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    yield lineno, exc
                    continue
                if not isinstance(obj, dict):
                    yield lineno, ValueError("row is not a JSON object")
                    continue
                yield lineno, {k: v for k, v in obj.items() if v is not None}
    else:
        raise ValueError(f"unsupported file format: {path}")


def _get_float(row: dict, key: str) -> float | None:
    value = row.get(key)
    if value is None:
        return None
    out = float(value)
    if not math.isfinite(out):
        raise ValueError(f"{key} is not finite")
    return out


def _get_time(row: dict, key: str) -> datetime | None:
    value = row.get(key)
    if value is None:
        return None
    return parse_utc(str(value))


def parse_sessions(path, strict: bool = False) -> SessionParseResult:
    """Parse session metadata; one SessionRecord per well-formed row."""
    path = Path(path)
    records: list[SessionRecord] = []
    issues: list[tuple[int, str]] = []
    for lineno, row in _iter_rows(path):
        if isinstance(row, Exception):
            if strict:
                raise ParseError(path, lineno, str(row))
            issues.append((lineno, str(row)))
            continue
        try:
            conn = _get_time(row, "connection_time")
            if conn is None:
                raise ValueError("connection_time is required")
            records.append(
                SessionRecord(
                    session_id=str(row.get("session_id", "")),
                    site_id=str(row.get("site_id", "")),
                    station_id=str(row.get("station_id", "")),
                    connection_time=conn,
                    disconnect_time=_get_time(row, "disconnect_time"),
                    delivered_energy_kwh=_get_float(row, "delivered_energy_kwh"),
                    requested_energy_kwh=_get_float(row, "requested_energy_kwh"),
                    available_minutes=_get_float(row, "available_minutes"),
                    requested_departure=_get_time(row, "requested_departure"),
                )
            )
        except (ValueError, TypeError) as exc:
            if strict:
                raise ParseError(path, lineno, str(exc)) from exc
            issues.append((lineno, str(exc)))
    return SessionParseResult(records=records, issues=issues)


def parse_timeseries(path, strict: bool = False) -> TimeSeriesParseResult:
    """Parse time-series measurements into a per-session sorted index.

    Duplicate (session, timestamp) pairs merge last-write-wins in file order;
    negative readings are clamped to 0. Both are counted in the result.
    """
    path = Path(path)
    issues: list[tuple[int, str]] = []
    n_clamped = 0
    n_duplicates = 0
    per_session: dict[str, dict[datetime, TimeSeriesSample]] = {}
    for lineno, row in _iter_rows(path):
        if isinstance(row, Exception):
            if strict:
                raise ParseError(path, lineno, str(row))
            issues.append((lineno, str(row)))
            continue
        try:
            sid = str(row.get("session_id", ""))
            if not sid:
                raise ValueError("session_id is required")
            ts = _get_time(row, "timestamp")
            if ts is None:
                raise ValueError("timestamp is required")
            current = _get_float(row, "current_a")
            pilot = _get_float(row, "pilot_a")
            if current is not None and current < 0:
                current = 0.0
                n_clamped += 1
            if pilot is not None and pilot < 0:
                pilot = 0.0
                n_clamped += 1
            sample = TimeSeriesSample(
                session_id=sid, timestamp=ts, current_a=current, pilot_a=pilot
            )
        except (ValueError, TypeError) as exc:
            if strict:
                raise ParseError(path, lineno, str(exc)) from exc
            issues.append((lineno, str(exc)))
            continue
        bucket = per_session.setdefault(sid, {})
        if ts in bucket:
            n_duplicates += 1
        bucket[ts] = sample
    index: SeriesIndex = {
        sid: [bucket[ts] for ts in sorted(bucket)] for sid, bucket in per_session.items()
    }
    return TimeSeriesParseResult(
        index=index,
        issues=issues,
        n_negative_clamped=n_clamped,
        n_duplicates_merged=n_duplicates,
    )


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, datetime):
        return format_utc(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _session_row(s: SessionRecord) -> dict:
    return {
        "session_id": s.session_id,
        "site_id": s.site_id,
        "station_id": s.station_id,
        "connection_time": s.connection_time,
        "disconnect_time": s.disconnect_time,
        "delivered_energy_kwh": s.delivered_energy_kwh,
        "requested_energy_kwh": s.requested_energy_kwh,
        "available_minutes": s.available_minutes,
        "requested_departure": s.requested_departure,
    }


def _sample_row(s: TimeSeriesSample) -> dict:
    return {
        "session_id": s.session_id,
        "timestamp": s.timestamp,
        "current_a": s.current_a,
        "pilot_a": s.pilot_a,
    }


def write_sessions(path, sessions: list[SessionRecord]) -> None:
    _write_rows(Path(path), SESSION_COLUMNS, [_session_row(s) for s in sessions])


def write_timeseries(path, index: SeriesIndex) -> None:
    rows = [
        _sample_row(s) for sid in index for s in index[sid]
    ]
    _write_rows(Path(path), TIMESERIES_COLUMNS, rows)


def _write_rows(path: Path, columns: list[str], rows: list[dict]) -> None:
    suffix = path.suffix.lower()
    if suffix == ".csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in columns])
    elif suffix in (".jsonl", ".ndjson", ".json"):
        with open(path, "w", encoding="utf-8") as fh:
            for row in rows:
                obj = {}
                for c in columns:
                    v = row[c]
                    if v is None:
                        continue
                    obj[c] = format_utc(v) if isinstance(v, datetime) else v
                fh.write(json.dumps(obj) + "\n")
    else:
        raise ValueError(f"unsupported file format: {path}")


@dataclass(frozen=True)
class SyntheticDepotSpec:
    """Knobs for a deterministic synthetic depot.

    Each session runs at a constant current level chosen so the session's
    exact trapezoidal energy matches a draw from its station's energy
    distribution; the target is that integral plus Gaussian noise. Early
    current is therefore genuinely predictive of the target. Stations with
    index < n_stations // 2 get their energy mean raised by
    heterogeneity_shift_kwh.
    """

    n_stations: int = 20
    sessions_per_station: tuple[int, int] = (20, 30)
    station_energy_mean_kwh: float = 9.0
    station_energy_std_kwh: float = 3.0
    heterogeneity_shift_kwh: float = 0.0
    noise_std_kwh: float = 0.5
    seed: int = 0
    session_minutes: tuple[int, int] = (90, 150)
    sample_period_s: int = 60
    nominal_voltage_v: float = 208.0
    user_field_presence: float = 0.75

    def __post_init__(self):
        if self.n_stations <= 0:
            raise ValueError("n_stations must be positive")
        lo, hi = self.sessions_per_station
        if lo <= 0 or hi < lo:
            raise ValueError("sessions_per_station must be a positive range")
        if self.station_energy_mean_kwh <= 0:
            raise ValueError("station_energy_mean_kwh must be positive")
        if self.station_energy_std_kwh < 0:
            raise ValueError("station_energy_std_kwh must be nonnegative")
        if self.heterogeneity_shift_kwh < 0:
            raise ValueError("heterogeneity_shift_kwh must be nonnegative")
        if self.noise_std_kwh < 0:
            raise ValueError("noise_std_kwh must be nonnegative")
        dlo, dhi = self.session_minutes
        if dlo <= 0 or dhi < dlo:
            raise ValueError("session_minutes must be a positive range")
        if self.sample_period_s <= 0:
            raise ValueError("sample_period_s must be positive")
        if not 0.0 <= self.user_field_presence <= 1.0:
            raise ValueError("user_field_presence must be in [0, 1]")


_SYNTH_EPOCH = datetime(2019, 1, 1, tzinfo=timezone.utc)


def generate_synthetic(spec: SyntheticDepotSpec) -> tuple[list[SessionRecord], SeriesIndex]:
    """Produce (sessions, series index) fully determined by spec.seed."""
    rng = rng_from(spec.seed, STREAM_SYNTH)
    voltage = spec.nominal_voltage_v
    n_shifted = spec.n_stations // 2
    sessions: list[SessionRecord] = []
    index: SeriesIndex = {}

    for st in range(spec.n_stations):
        station_id = f"ST{st:03d}"
        mean_k = spec.station_energy_mean_kwh + (
            spec.heterogeneity_shift_kwh if st < n_shifted else 0.0
        )
        lo, hi = spec.sessions_per_station
        n_sessions = int(rng.integers(lo, hi + 1))
        for k in range(n_sessions):
            session_id = f"{station_id}-{k:04d}"
            conn = _SYNTH_EPOCH + timedelta(seconds=int(rng.integers(0, 365 * 86400)))
            dlo, dhi = spec.session_minutes
            duration_min = int(rng.integers(dlo, dhi + 1))
            duration_s = duration_min * 60

            energy_target = max(0.25, float(rng.normal(mean_k, spec.station_energy_std_kwh)))
            current = energy_target * 1000.0 / (voltage * duration_min / 60.0)
            current = min(max(current, 0.5), 80.0)
            pilot = max(8.0, math.ceil(current / 4.0) * 4.0)

            n_steps = duration_s // spec.sample_period_s
            samples = [
                TimeSeriesSample(
                    session_id=session_id,
                    timestamp=conn + timedelta(seconds=i * spec.sample_period_s),
                    current_a=current,
                    pilot_a=pilot,
                )
                for i in range(n_steps + 1)
            ]
            span_h = (n_steps * spec.sample_period_s) / 3600.0
            exact_kwh = voltage * current / 1000.0 * span_h
            noise = float(rng.normal(0.0, spec.noise_std_kwh)) if spec.noise_std_kwh else 0.0
            delivered = max(0.0, exact_kwh + noise)

            p = spec.user_field_presence
            requested = (
                energy_target * float(rng.uniform(0.8, 1.25))
                if rng.random() < p
                else None
            )
            available = float(duration_min) if rng.random() < p else None
            departure = (
                conn + timedelta(minutes=int(duration_min * rng.uniform(1.0, 1.4)))
                if rng.random() < p
                else None
            )

            sessions.append(
                SessionRecord(
                    session_id=session_id,
                    site_id="SYN",
                    station_id=station_id,
                    connection_time=conn,
                    disconnect_time=conn + timedelta(seconds=duration_s),
                    delivered_energy_kwh=delivered,
                    requested_energy_kwh=requested,
                    available_minutes=available,
                    requested_departure=departure,
                )
            )
            index[session_id] = samples
    return sessions, index
