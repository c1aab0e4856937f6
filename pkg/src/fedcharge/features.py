"""Per-session feature construction from plug-in context and the early window.

The numeric feature vector has a fixed, documented order (FEATURE_COLUMNS).
Missing values are carried as NaN until imputation; cyclical encodings and
binary flags are exempt from standardization.
"""

from __future__ import annotations

import csv
import math
import warnings as _warnings
from collections import Counter
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .sessions import (
    DatasetConfig,
    SeriesIndex,
    SessionRecord,
    TimeSeriesSample,
    early_window_samples,
)

FEATURE_COLUMNS = (
    "current_mean",
    "current_max",
    "current_min",
    "current_std",
    "current_first",
    "current_last",
    "current_slope",
    "pilot_mean",
    "pilot_max",
    "pilot_min",
    "pilot_std",
    "pilot_first",
    "pilot_last",
    "pilot_slope",
    "util_mean",
    "util_max",
    "early_energy_kwh",
    "n_current",
    "n_pilot",
    "n_merged",
    "observed_window_minutes",
    "hour_sin",
    "hour_cos",
    "weekday_sin",
    "weekday_cos",
    "month_sin",
    "month_cos",
    "day_of_year_sin",
    "day_of_year_cos",
    "is_weekend",
    "requested_energy_kwh",
    "available_minutes",
    "departure_offset_minutes",
    "requested_energy_missing",
    "available_minutes_missing",
    "departure_offset_missing",
)

# Cyclical encodings and binary flags pass through standardization untouched.
UNSCALED_FEATURES = (
    "hour_sin",
    "hour_cos",
    "weekday_sin",
    "weekday_cos",
    "month_sin",
    "month_cos",
    "day_of_year_sin",
    "day_of_year_cos",
    "is_weekend",
    "requested_energy_missing",
    "available_minutes_missing",
    "departure_offset_missing",
)
UNSCALED_INDICES = tuple(FEATURE_COLUMNS.index(name) for name in UNSCALED_FEATURES)

STD_FLOOR = 1e-8


def summary_stats(values) -> tuple[float, float, float, float, float, float] | None:
    """(mean, max, min, population std, first, last); None for an empty list."""
    if len(values) == 0:
        return None
    arr = np.asarray(values, dtype=float)
    return (
        float(arr.mean()),
        float(arr.max()),
        float(arr.min()),
        float(arr.std()),
        float(arr[0]),
        float(arr[-1]),
    )


def least_squares_slope(times_s, values) -> float | None:
    """OLS slope cov(t, v) / var(t); None if under two distinct timestamps."""
    if len(times_s) < 2 or len(times_s) != len(values):
        return None
    t = np.asarray(times_s, dtype=float)
    v = np.asarray(values, dtype=float)
    tc = t - t.mean()
    denom = float(tc @ tc)
    if denom == 0.0:
        return None
    return float(tc @ (v - v.mean()) / denom)


def utilization_stats(
    samples: list[TimeSeriesSample],
) -> tuple[float | None, float | None]:
    """(mean, max) of current/pilot at timestamps with both signals and pilot > 0."""
    ratios = [
        s.current_a / s.pilot_a
        for s in samples
        if s.current_a is not None and s.pilot_a is not None and s.pilot_a > 0
    ]
    if not ratios:
        return None, None
    return float(np.mean(ratios)), float(max(ratios))


def early_energy(times_s, currents_a, voltage_v: float) -> float:
    """Trapezoidal integral of V*I/1000 kW over hours; under two samples -> 0."""
    if len(times_s) < 2:
        return 0.0
    t = np.asarray(times_s, dtype=float)
    power_kw = voltage_v * np.asarray(currents_a, dtype=float) / 1000.0
    return float(np.sum((power_kw[:-1] + power_kw[1:]) / 2.0 * np.diff(t)) / 3600.0)


@dataclass(frozen=True)
class CalendarFeatures:
    hour: int
    weekday: int          # Monday = 0
    month: int            # 1..12
    day_of_year: int      # 1..366
    is_weekend: bool
    hour_sin: float
    hour_cos: float
    weekday_sin: float
    weekday_cos: float
    month_sin: float
    month_cos: float
    day_of_year_sin: float
    day_of_year_cos: float


def calendar_features(connection_time: datetime) -> CalendarFeatures:
    """Raw calendar fields plus sin/cos encodings (periods 24/7/12/366)."""
    hour = connection_time.hour
    weekday = connection_time.weekday()
    month = connection_time.month
    doy = connection_time.timetuple().tm_yday

    def enc(value: float, period: float) -> tuple[float, float]:
        angle = 2.0 * math.pi * value / period
        return math.sin(angle), math.cos(angle)

    hs, hc = enc(hour, 24)
    ws, wc = enc(weekday, 7)
    ms, mc = enc(month - 1, 12)
    ds, dc = enc(doy - 1, 366)
    return CalendarFeatures(
        hour=hour,
        weekday=weekday,
        month=month,
        day_of_year=doy,
        is_weekend=weekday >= 5,
        hour_sin=hs,
        hour_cos=hc,
        weekday_sin=ws,
        weekday_cos=wc,
        month_sin=ms,
        month_cos=mc,
        day_of_year_sin=ds,
        day_of_year_cos=dc,
    )


def departure_offset(session: SessionRecord) -> float | None:
    """(requested_departure - connection_time) in minutes; negative -> missing."""
    if session.requested_departure is None:
        return None
    offset = (session.requested_departure - session.connection_time).total_seconds() / 60.0
    if offset < 0:
        return None
    return offset


@dataclass(frozen=True)
class EarlyWindowFeatures:
    """Summary, trend, interaction, energy, and coverage features; None = missing."""

    current_mean: float | None
    current_max: float | None
    current_min: float | None
    current_std: float | None
    current_first: float | None
    current_last: float | None
    current_slope: float | None
    pilot_mean: float | None
    pilot_max: float | None
    pilot_min: float | None
    pilot_std: float | None
    pilot_first: float | None
    pilot_last: float | None
    pilot_slope: float | None
    util_mean: float | None
    util_max: float | None
    early_energy_kwh: float
    n_current: int
    n_pilot: int
    n_merged: int
    observed_window_minutes: float


def extract_early_window(
    session: SessionRecord,
    samples: list[TimeSeriesSample],
    cfg: DatasetConfig,
) -> list[TimeSeriesSample]:
    """Sorted samples in the closed interval [t_conn, t_conn + W]."""
    return early_window_samples(session, samples, cfg)


def early_window_features(
    session: SessionRecord,
    samples: list[TimeSeriesSample],
    cfg: DatasetConfig,
) -> EarlyWindowFeatures:
    window = extract_early_window(session, samples, cfg)
    t0 = session.connection_time

    def seconds(sample: TimeSeriesSample) -> float:
        return (sample.timestamp - t0).total_seconds()

    cur = [(seconds(s), s.current_a) for s in window if s.current_a is not None]
    pil = [(seconds(s), s.pilot_a) for s in window if s.pilot_a is not None]
    cur_t, cur_v = zip(*cur) if cur else ((), ())
    pil_t, pil_v = zip(*pil) if pil else ((), ())

    cur_stats = summary_stats(cur_v)
    pil_stats = summary_stats(pil_v)
    util_mean, util_max = utilization_stats(window)

    if len(window) >= 2:
        observed = (window[-1].timestamp - window[0].timestamp).total_seconds() / 60.0
    else:
        observed = 0.0

    def unpack(stats):
        return stats if stats is not None else (None,) * 6

    c_mean, c_max, c_min, c_std, c_first, c_last = unpack(cur_stats)
    p_mean, p_max, p_min, p_std, p_first, p_last = unpack(pil_stats)
    return EarlyWindowFeatures(
        current_mean=c_mean,
        current_max=c_max,
        current_min=c_min,
        current_std=c_std,
        current_first=c_first,
        current_last=c_last,
        current_slope=least_squares_slope(cur_t, cur_v),
        pilot_mean=p_mean,
        pilot_max=p_max,
        pilot_min=p_min,
        pilot_std=p_std,
        pilot_first=p_first,
        pilot_last=p_last,
        pilot_slope=least_squares_slope(pil_t, pil_v),
        util_mean=util_mean,
        util_max=util_max,
        early_energy_kwh=early_energy(cur_t, cur_v, cfg.nominal_voltage_v),
        n_current=len(cur),
        n_pilot=len(pil),
        n_merged=len(window),
        observed_window_minutes=observed,
    )


@dataclass(frozen=True)
class FeatureVector:
    """One session's numeric features (NaN = missing), grouping ids, target."""

    session_id: str
    station_id: str
    numeric: np.ndarray
    target: float


def build_feature_vector(
    session: SessionRecord,
    samples: list[TimeSeriesSample],
    cfg: DatasetConfig,
) -> FeatureVector:
    """Assemble the documented feature order for one retained session."""
    ew = early_window_features(session, samples, cfg)
    cal = calendar_features(session.connection_time)
    offset = departure_offset(session)

    def nv(value) -> float:
        return float(value) if value is not None else math.nan

    numeric = np.array(
        [
            nv(ew.current_mean),
            nv(ew.current_max),
            nv(ew.current_min),
            nv(ew.current_std),
            nv(ew.current_first),
            nv(ew.current_last),
            nv(ew.current_slope),
            nv(ew.pilot_mean),
            nv(ew.pilot_max),
            nv(ew.pilot_min),
            nv(ew.pilot_std),
            nv(ew.pilot_first),
            nv(ew.pilot_last),
            nv(ew.pilot_slope),
            nv(ew.util_mean),
            nv(ew.util_max),
            ew.early_energy_kwh,
            float(ew.n_current),
            float(ew.n_pilot),
            float(ew.n_merged),
            ew.observed_window_minutes,
            cal.hour_sin,
            cal.hour_cos,
            cal.weekday_sin,
            cal.weekday_cos,
            cal.month_sin,
            cal.month_cos,
            cal.day_of_year_sin,
            cal.day_of_year_cos,
            1.0 if cal.is_weekend else 0.0,
            nv(session.requested_energy_kwh),
            nv(session.available_minutes),
            nv(offset),
            0.0 if session.requested_energy_kwh is not None else 1.0,
            0.0 if session.available_minutes is not None else 1.0,
            0.0 if offset is not None else 1.0,
        ],
        dtype=float,
    )
    return FeatureVector(
        session_id=session.session_id,
        station_id=session.station_id,
        numeric=numeric,
        target=float(session.delivered_energy_kwh),
    )


@dataclass
class FeatureTable:
    """Feature matrix for a dataset: one row per retained session."""

    feature_names: tuple[str, ...]
    X: np.ndarray                 # (n, d) float64, NaN = missing
    y: np.ndarray                 # (n,)
    session_ids: list[str]
    station_ids: list[str]
    warnings: Counter

    def __len__(self) -> int:
        return len(self.session_ids)


def build_feature_table(
    sessions: list[SessionRecord],
    series: SeriesIndex,
    cfg: DatasetConfig,
) -> FeatureTable:
    """Featurize retained sessions in order; tallies data-quality warnings."""
    rows = []
    targets = []
    session_ids = []
    station_ids = []
    warnings: Counter = Counter()
    for session in sessions:
        samples = series[session.session_id]
        n_pre = sum(1 for s in samples if s.timestamp < session.connection_time)
        if n_pre:
            warnings["samples_before_connection"] += n_pre
        vec = build_feature_vector(session, samples, cfg)
        if session.requested_departure is not None and departure_offset(session) is None:
            warnings["negative_departure_offset"] += 1
        rows.append(vec.numeric)
        targets.append(vec.target)
        session_ids.append(vec.session_id)
        station_ids.append(vec.station_id)
    X = np.vstack(rows) if rows else np.empty((0, len(FEATURE_COLUMNS)))
    return FeatureTable(
        feature_names=FEATURE_COLUMNS,
        X=X,
        y=np.asarray(targets, dtype=float),
        session_ids=session_ids,
        station_ids=station_ids,
        warnings=warnings,
    )


@dataclass(frozen=True)
class Imputer:
    """Train-split medians used to fill NaN entries."""

    medians: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        out = X.copy()
        nan_rows, nan_cols = np.nonzero(np.isnan(out))
        out[nan_rows, nan_cols] = self.medians[nan_cols]
        return out


def fit_imputer(X_train: np.ndarray) -> Imputer:
    if X_train.shape[0] == 0:
        raise ValueError("cannot fit imputer on an empty training split")
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns
        medians = np.nanmedian(X_train, axis=0)
    medians = np.where(np.isnan(medians), 0.0, medians)
    return Imputer(medians=medians)


@dataclass(frozen=True)
class Scaler:
    """Train-split standardization; exempt columns pass through unchanged."""

    mean: np.ndarray
    std: np.ndarray
    exempt: tuple[int, ...]

    def apply(self, X: np.ndarray) -> np.ndarray:
        out = (X - self.mean) / self.std
        if self.exempt:
            idx = list(self.exempt)
            out[..., idx] = X[..., idx]
        return out


def fit_scaler(
    X_train: np.ndarray, exempt: tuple[int, ...] = UNSCALED_INDICES
) -> Scaler:
    """Per-feature mean/std from the training split only; std floored at 1e-8."""
    if X_train.shape[0] == 0:
        raise ValueError("cannot fit scaler on an empty training split")
    mean = X_train.mean(axis=0)
    std = np.maximum(X_train.std(axis=0), STD_FLOOR)
    return Scaler(mean=mean, std=std, exempt=tuple(exempt))


def apply_scaler(scaler: Scaler, X: np.ndarray) -> np.ndarray:
    return scaler.apply(X)


def write_features(path, table: FeatureTable) -> None:
    """features.csv: session_id, station_id, target, then FEATURE_COLUMNS.

    Raw (unimputed, unscaled) values; empty cell = missing. Downstream stages
    fit imputation and scaling on their own training split.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["session_id", "station_id", "target", *table.feature_names])
        for i in range(len(table)):
            cells = [table.session_ids[i], table.station_ids[i], repr(float(table.y[i]))]
            for v in table.X[i]:
                cells.append("" if math.isnan(v) else repr(float(v)))
            writer.writerow(cells)


def read_features(path) -> FeatureTable:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["session_id", "station_id", "target", *FEATURE_COLUMNS]
        if header != expected:
            raise ValueError(f"unexpected features.csv header in {path}")
        session_ids, station_ids, targets, rows = [], [], [], []
        for row in reader:
            session_ids.append(row[0])
            station_ids.append(row[1])
            targets.append(float(row[2]))
            rows.append([math.nan if cell == "" else float(cell) for cell in row[3:]])
    X = np.asarray(rows, dtype=float) if rows else np.empty((0, len(FEATURE_COLUMNS)))
    return FeatureTable(
        feature_names=FEATURE_COLUMNS,
        X=X,
        y=np.asarray(targets, dtype=float),
        session_ids=session_ids,
        station_ids=station_ids,
        warnings=Counter(),
    )
