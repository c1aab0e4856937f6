"""Client-vs-global target divergence and the permutation-derived IID threshold.

Divergences use natural log, so Jensen-Shannon values live in [0, ln 2].
Histograms share one set of equal-width bin edges built from the global
target range; the bin count is a config knob recorded in every report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .partition import ClientPartition
from .seeding import STREAM_PERM, rng_from

DEFAULT_BINS = 50
DEFAULT_PERMUTATIONS = 200
LN2 = math.log(2.0)


@dataclass(frozen=True)
class HistogramDensity:
    """Empirical probabilities over shared, strictly increasing bin edges."""

    bin_edges: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")
        if abs(float(self.probabilities.sum()) - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        if np.any(self.probabilities < 0):
            raise ValueError("probabilities must be nonnegative")


def global_bin_edges(targets, n_bins: int = DEFAULT_BINS) -> np.ndarray:
    """Equal-width edges over the global [min, max] target range."""
    arr = np.asarray(targets, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot build bin edges from an empty target list")
    lo, hi = float(arr.min()), float(arr.max())
    if lo == hi:
        # Degenerate range: center a unit-width span so histograms stay valid.
        lo, hi = lo - 0.5, hi + 0.5
    return np.linspace(lo, hi, n_bins + 1)


def fit_histogram(targets, edges: np.ndarray) -> HistogramDensity:
    """Counts per bin normalized to probabilities; upper edge falls in the last bin."""
    arr = np.asarray(targets, dtype=float)
    if arr.size == 0:
        raise ValueError("cannot fit a histogram on an empty target list")
    counts, _ = np.histogram(arr, bins=edges)
    return HistogramDensity(bin_edges=edges, probabilities=counts / arr.size)


def kl_divergence(p: HistogramDensity, q: HistogramDensity) -> float:
    """Sum of p_b * ln(p_b / q_b) over bins with p_b > 0."""
    pv, qv = p.probabilities, q.probabilities
    mask = pv > 0
    if np.any(qv[mask] == 0):
        raise ValueError("KL undefined: q vanishes where p has mass")
    return float(np.sum(pv[mask] * np.log(pv[mask] / qv[mask])))


def js_divergence(p_k: HistogramDensity, p: HistogramDensity) -> float:
    """0.5*KL(p_k, M) + 0.5*KL(p, M) with M the bin-wise average of the pair."""
    if not np.array_equal(p_k.bin_edges, p.bin_edges):
        raise ValueError("histograms must share bin edges")
    m = HistogramDensity(
        bin_edges=p_k.bin_edges,
        probabilities=(p_k.probabilities + p.probabilities) / 2.0,
    )
    return 0.5 * kl_divergence(p_k, m) + 0.5 * kl_divergence(p, m)


def weighted_js(partition: ClientPartition, per_client_js: dict[str, float]) -> float:
    """Sample-size weighted average of per-client divergences."""
    weights = partition.weights
    return float(
        sum(
            w * per_client_js[cid]
            for w, cid in zip(weights, partition.client_ids)
        )
    )


def _weighted_js_for_assignment(
    targets: np.ndarray,
    slices: list[np.ndarray],
    sizes: np.ndarray,
    global_hist: HistogramDensity,
    edges: np.ndarray,
) -> float:
    weights = sizes / sizes.sum()
    total = 0.0
    for w, idx in zip(weights, slices):
        client_hist = fit_histogram(targets[idx], edges)
        total += w * js_divergence(client_hist, global_hist)
    return total


def permutation_null(
    targets,
    client_sizes,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
    n_bins: int = DEFAULT_BINS,
) -> tuple[float, float, float]:
    """(mu, sigma, tau) of weighted JS under random client assignment.

    Each permutation reshuffles the target-to-client assignment uniformly
    while preserving client sizes; tau = mu + 2*sigma. Replicates run in a
    fixed order so results depend only on the seed.
    """
    arr = np.asarray(targets, dtype=float)
    sizes = np.asarray(client_sizes, dtype=int)
    if sizes.sum() != arr.size:
        raise ValueError("client sizes must sum to the number of targets")
    if n_permutations < 2:
        raise ValueError("need at least 2 permutations")
    edges = global_bin_edges(arr, n_bins)
    global_hist = fit_histogram(arr, edges)
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    rng = rng_from(seed, STREAM_PERM)
    values = np.empty(n_permutations)
    for i in range(n_permutations):
        perm = rng.permutation(arr.size)
        slices = [perm[bounds[k] : bounds[k + 1]] for k in range(sizes.size)]
        values[i] = _weighted_js_for_assignment(arr, slices, sizes, global_hist, edges)
    mu = float(values.mean())
    sigma = float(values.std())
    return mu, sigma, mu + 2.0 * sigma


@dataclass(frozen=True)
class HeterogeneityReport:
    """Divergence summary, permutation threshold, and the IID classification."""

    per_client_js: dict[str, float]
    js_weighted: float
    js_max: float
    mu_iid: float
    sigma_iid: float
    tau_iid: float
    classification: str          # "IID" or "non-IID"
    n_permutations: int
    seed: int
    n_bins: int
    client_sizes: dict[str, int]


def classify(
    partition: ClientPartition,
    per_client_js: dict[str, float],
    mu_iid: float,
    sigma_iid: float,
    tau_iid: float,
    n_permutations: int,
    seed: int,
    n_bins: int,
) -> HeterogeneityReport:
    """Assemble the report; non-IID iff weighted JS strictly exceeds tau."""
    jsw = weighted_js(partition, per_client_js)
    sizes = partition.sizes
    return HeterogeneityReport(
        per_client_js=dict(per_client_js),
        js_weighted=jsw,
        js_max=max(per_client_js.values()),
        mu_iid=mu_iid,
        sigma_iid=sigma_iid,
        tau_iid=tau_iid,
        classification="non-IID" if jsw > tau_iid else "IID",
        n_permutations=n_permutations,
        seed=seed,
        n_bins=n_bins,
        client_sizes={
            cid: int(n) for cid, n in zip(partition.client_ids, sizes)
        },
    )


def analyze_partition(
    targets,
    partition: ClientPartition,
    n_bins: int = DEFAULT_BINS,
    n_permutations: int = DEFAULT_PERMUTATIONS,
    seed: int = 0,
) -> HeterogeneityReport:
    """Full pipeline: per-client JS, permutation null, classification."""
    arr = np.asarray(targets, dtype=float)
    edges = global_bin_edges(arr, n_bins)
    global_hist = fit_histogram(arr, edges)
    per_client = {
        cid: js_divergence(fit_histogram(arr[list(idx)], edges), global_hist)
        for cid, idx in zip(partition.client_ids, partition.indices)
    }
    mu, sigma, tau = permutation_null(
        arr, partition.sizes, n_permutations=n_permutations, seed=seed, n_bins=n_bins
    )
    return classify(partition, per_client, mu, sigma, tau, n_permutations, seed, n_bins)
