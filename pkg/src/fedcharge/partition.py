"""Station-level client partitioning shared by federation and heterogeneity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ClientPartition:
    """Ordered clients (lexicographic station id) with sample index lists.

    Index lists are disjoint and cover the partitioned rows exactly; weights
    are n_k / sum(n_j).
    """

    client_ids: tuple[str, ...]
    indices: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if not self.client_ids:
            raise ValueError("partition must contain at least one client")
        if any(len(idx) == 0 for idx in self.indices):
            raise ValueError("clients with zero samples are not allowed")

    @property
    def n_clients(self) -> int:
        return len(self.client_ids)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(idx) for idx in self.indices], dtype=int)

    @property
    def weights(self) -> np.ndarray:
        sizes = self.sizes
        return sizes / sizes.sum()


def partition_by_station(station_ids) -> ClientPartition:
    """One client per distinct station; row order preserved within a client."""
    if len(station_ids) == 0:
        raise ValueError("cannot partition an empty dataset")
    buckets: dict[str, list[int]] = {}
    for i, sid in enumerate(station_ids):
        buckets.setdefault(sid, []).append(i)
    ordered = sorted(buckets)
    return ClientPartition(
        client_ids=tuple(ordered),
        indices=tuple(tuple(buckets[sid]) for sid in ordered),
    )
