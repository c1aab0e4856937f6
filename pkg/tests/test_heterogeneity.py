"""Histogram divergences, the permutation null, and IID classification."""

import math

import numpy as np
import pytest

from fedcharge.heterogeneity import (
    HistogramDensity,
    LN2,
    analyze_partition,
    classify,
    fit_histogram,
    global_bin_edges,
    js_divergence,
    kl_divergence,
    permutation_null,
    weighted_js,
)
from fedcharge.partition import partition_by_station


def hist(probs, edges=None):
    probs = np.asarray(probs, dtype=float)
    if edges is None:
        edges = np.arange(probs.size + 1, dtype=float)
    return HistogramDensity(bin_edges=np.asarray(edges, dtype=float), probabilities=probs)


class TestHistogram:
    def test_point_mass(self):
        edges = global_bin_edges([5.0, 5.1], n_bins=4)
        h = fit_histogram([5.05, 5.05, 5.05], edges)
        assert h.probabilities.max() == 1.0

    def test_uniform_grid_counts(self):
        # Hand count: targets 0.5, 1.5, 2.5, 3.5 over edges 0..4 -> 1 per bin.
        edges = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
        h = fit_histogram([0.5, 1.5, 2.5, 3.5], edges)
        np.testing.assert_allclose(h.probabilities, [0.25, 0.25, 0.25, 0.25])

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            targets = rng.uniform(0, 30, size=int(rng.integers(1, 200)))
            h = fit_histogram(targets, global_bin_edges(targets, 50))
            assert abs(h.probabilities.sum() - 1.0) < 1e-12

    def test_upper_edge_in_last_bin(self):
        edges = np.array([0.0, 1.0, 2.0])
        h = fit_histogram([2.0], edges)
        np.testing.assert_allclose(h.probabilities, [0.0, 1.0])

    def test_empty_targets_rejected(self):
        with pytest.raises(ValueError):
            fit_histogram([], np.array([0.0, 1.0]))


class TestKl:
    def test_identity_zero(self):
        p = hist([0.25, 0.75])
        assert kl_divergence(p, p) == 0.0

    def test_single_term_value(self):
        assert kl_divergence(hist([1.0, 0.0]), hist([0.5, 0.5])) == pytest.approx(
            math.log(2), abs=1e-12
        )

    def test_nonnegative_on_random_pairs(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.dirichlet(np.ones(10))
            q = rng.dirichlet(np.ones(10)) + 1e-9
            q = q / q.sum()
            assert kl_divergence(hist(p), hist(q)) >= -1e-15

    def test_contract_violation_raises(self):
        with pytest.raises(ValueError):
            kl_divergence(hist([0.5, 0.5]), hist([1.0, 0.0]))


class TestJs:
    def test_identical_distributions_zero(self):
        p = hist([0.2, 0.3, 0.5])
        assert js_divergence(p, p) == pytest.approx(0.0, abs=1e-15)

    def test_disjoint_point_masses_ln2(self):
        assert js_divergence(hist([1.0, 0.0]), hist([0.0, 1.0])) == pytest.approx(
            LN2, abs=1e-12
        )

    def test_symmetry(self):
        rng = np.random.default_rng(2)
        for _ in range(30):
            p = hist(rng.dirichlet(np.ones(8)))
            q = hist(rng.dirichlet(np.ones(8)))
            assert js_divergence(p, q) == pytest.approx(js_divergence(q, p), abs=1e-12)

    def test_range_bounds_fuzz(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p = hist(rng.dirichlet(np.ones(12)))
            q = hist(rng.dirichlet(np.ones(12)))
            v = js_divergence(p, q)
            assert -1e-15 <= v <= LN2 + 1e-15

    def test_mismatched_edges_rejected(self):
        p = hist([0.5, 0.5], edges=[0, 1, 2])
        q = hist([0.5, 0.5], edges=[0, 1, 3])
        with pytest.raises(ValueError):
            js_divergence(p, q)


class TestWeightedJs:
    def test_convexity_fixed_point(self):
        part = partition_by_station(["a"] * 3 + ["b"] * 5)
        assert weighted_js(part, {"a": 0.3, "b": 0.3}) == pytest.approx(0.3, abs=1e-15)

    def test_two_client_hand_value(self):
        part = partition_by_station(["a", "b", "b", "b"])
        assert weighted_js(part, {"a": 0.4, "b": 0.0}) == pytest.approx(0.1, abs=1e-15)

    def test_bounds_and_brute_force(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            k = int(rng.integers(2, 10))
            stations = []
            for i in range(k):
                stations += [f"st{i}"] * int(rng.integers(1, 20))
            part = partition_by_station(stations)
            js = {cid: float(rng.uniform(0, LN2)) for cid in part.client_ids}
            got = weighted_js(part, js)
            sizes = part.sizes
            brute = sum(
                sizes[i] / sizes.sum() * js[cid]
                for i, cid in enumerate(part.client_ids)
            )
            assert abs(got - brute) < 1e-12
            assert min(js.values()) - 1e-12 <= got <= max(js.values()) + 1e-12


class TestPermutationNull:
    def test_identical_targets_degenerate(self):
        mu, sigma, tau = permutation_null([7.0] * 30, [10, 10, 10], 20, seed=0)
        assert (mu, sigma, tau) == (0.0, 0.0, 0.0)

    def test_same_seed_reproducible(self):
        rng = np.random.default_rng(5)
        targets = rng.uniform(0, 20, size=60)
        a = permutation_null(targets, [20, 20, 20], 50, seed=9)
        b = permutation_null(targets, [20, 20, 20], 50, seed=9)
        assert a == b

    def test_tau_is_mu_plus_two_sigma(self):
        rng = np.random.default_rng(6)
        targets = rng.uniform(0, 20, size=80)
        mu, sigma, tau = permutation_null(targets, [40, 40], 40, seed=1)
        assert tau == pytest.approx(mu + 2 * sigma, abs=1e-15)

    def test_size_mismatch_rejected(self):
        with pytest.raises(ValueError):
            permutation_null([1.0, 2.0], [3], 10, seed=0)


class TestClassify:
    def _report(self, jsw, tau):
        part = partition_by_station(["a", "b"])
        return classify(
            part,
            {"a": jsw, "b": jsw},
            mu_iid=max(tau - 0.002, 0.0),
            sigma_iid=0.001,
            tau_iid=tau,
            n_permutations=200,
            seed=0,
            n_bins=50,
        )

    def test_observed_exceeding_tau_is_non_iid(self):
        # Reported depot-scale values: weighted divergence 0.0169 vs
        # threshold 0.0069 classifies as non-IID.
        assert self._report(0.0169, 0.0069).classification == "non-IID"

    def test_zero_divergence_is_iid(self):
        assert self._report(0.0, 0.0069).classification == "IID"

    def test_boundary_is_iid_strict_inequality(self):
        assert self._report(0.0069, 0.0069).classification == "IID"


class TestAnalyzePartition:
    def test_full_pipeline_deterministic(self):
        rng = np.random.default_rng(7)
        targets = rng.normal(9, 3, size=200)
        stations = [f"st{i % 8}" for i in range(200)]
        part = partition_by_station(stations)
        a = analyze_partition(targets, part, n_permutations=50, seed=3)
        b = analyze_partition(targets, part, n_permutations=50, seed=3)
        assert a == b
        assert set(a.per_client_js) == set(part.client_ids)
        assert all(0 <= v <= LN2 for v in a.per_client_js.values())
        assert a.js_max == max(a.per_client_js.values())

    def test_engineered_shift_detected(self):
        # Clients draw from two well-separated distributions: must flag non-IID.
        rng = np.random.default_rng(8)
        targets = np.concatenate([rng.normal(5, 1, 300), rng.normal(15, 1, 300)])
        stations = ["lo"] * 300 + ["hi"] * 300
        report = analyze_partition(targets, partition_by_station(stations),
                                   n_permutations=100, seed=0)
        assert report.classification == "non-IID"
        assert report.js_weighted > report.tau_iid
