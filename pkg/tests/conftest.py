"""Shared builders and fixtures for the test suite."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone

import pytest

from fedcharge.features import build_feature_table
from fedcharge.ingest import SyntheticDepotSpec, generate_synthetic
from fedcharge.sessions import (
    DatasetConfig,
    SessionRecord,
    TimeSeriesSample,
    retain_sessions,
)

T0 = datetime(2019, 1, 7, 8, 30, 0, tzinfo=timezone.utc)


def make_session(
    session_id="s1",
    station_id="ST001",
    connection_time=T0,
    delivered=9.0,
    **kwargs,
) -> SessionRecord:
    return SessionRecord(
        session_id=session_id,
        site_id="caltech",
        station_id=station_id,
        connection_time=connection_time,
        delivered_energy_kwh=delivered,
        **kwargs,
    )


def make_samples(
    session_id="s1",
    start=T0,
    offsets_s=(0, 60, 120, 180, 240),
    current=32.0,
    pilot=32.0,
):
    """One sample per offset; current/pilot may be scalars, sequences, or None."""
    n = len(offsets_s)

    def at(values, i):
        if values is None:
            return None
        if isinstance(values, (int, float)):
            return float(values)
        return values[i] if values[i] is None else float(values[i])

    return [
        TimeSeriesSample(
            session_id=session_id,
            timestamp=start + timedelta(seconds=int(off)),
            current_a=at(current, i),
            pilot_a=at(pilot, i),
        )
        for i, off in enumerate(offsets_s)
    ]


@pytest.fixture(scope="session")
def dataset_cfg():
    return DatasetConfig()


@pytest.fixture(scope="session")
def small_depot(dataset_cfg):
    """10 stations, ~250 sessions; shared by training-path tests."""
    spec = SyntheticDepotSpec(n_stations=10, sessions_per_station=(20, 30), seed=3)
    sessions, series = generate_synthetic(spec)
    retained = retain_sessions(sessions, series, dataset_cfg)
    table = build_feature_table(retained.sessions, series, dataset_cfg)
    return sessions, series, table


@pytest.fixture(scope="session")
def small_table(small_depot):
    return small_depot[2]
