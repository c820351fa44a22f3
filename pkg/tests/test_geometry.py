"""Distance pipeline against brute-force references."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcl.geometry import (
    ENTRY_COUNTER,
    clustering_distance,
    jaccard_distance,
    k_reciprocal_sets,
    knn,
    neighbor_sets,
    pairwise_cosine_distance,
)

from .oracles import jaccard_from_sets, knn_full_sort, reciprocal_membership


def _unit(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


class TestCosine:
    def test_matches_direct_formula(self, rng):
        e = _unit(rng, 40, 8)
        dm = pairwise_cosine_distance(e)
        want = 1.0 - e @ e.T
        np.fill_diagonal(want, 0.0)
        assert np.allclose(dm.entries, want, atol=1e-12)

    def test_symmetric_zero_diagonal(self, rng):
        dm = pairwise_cosine_distance(_unit(rng, 25, 6))
        assert np.array_equal(dm.entries, dm.entries.T)
        assert np.all(np.diag(dm.entries) == 0.0)

    def test_rejects_non_unit_rows(self, rng):
        with pytest.raises(ValueError):
            pairwise_cosine_distance(rng.standard_normal((5, 4)) * 3.0)

    def test_rejects_non_finite(self, rng):
        e = _unit(rng, 5, 4)
        e[2, 1] = np.nan
        with pytest.raises(ValueError):
            pairwise_cosine_distance(e)

    def test_counts_entries(self, rng):
        ENTRY_COUNTER.reset()
        pairwise_cosine_distance(_unit(rng, 33, 5))
        assert ENTRY_COUNTER.total == 33 * 33


class TestKnn:
    def test_matches_full_sort(self, rng):
        for trial in range(20):
            n = int(rng.integers(5, 60))
            k = int(rng.integers(1, n - 1))
            dm = pairwise_cosine_distance(_unit(rng, n, 6))
            assert np.array_equal(knn(dm, k), knn_full_sort(dm.entries, k))

    def test_tie_heavy_matrix(self):
        # quantized distances force many exact ties; lower index must win
        rng = np.random.default_rng(0)
        n = 40
        raw = rng.integers(0, 4, size=(n, n)).astype(np.float64)
        d = (raw + raw.T) / 2.0
        np.fill_diagonal(d, 0.0)
        from mcl.geometry import DistanceMatrix
        dm = DistanceMatrix(entries=d, kind="cosine")
        for k in (1, 3, 7, n - 2):
            assert np.array_equal(knn(dm, k), knn_full_sort(d, k))

    def test_k_bounds(self, rng):
        dm = pairwise_cosine_distance(_unit(rng, 6, 4))
        with pytest.raises(ValueError):
            knn(dm, 6)
        with pytest.raises(ValueError):
            knn(dm, 0)


class TestReciprocal:
    def test_matches_brute_force(self, rng):
        for trial in range(10):
            n = int(rng.integers(6, 50))
            k = int(rng.integers(1, min(12, n - 1)))
            dm = pairwise_cosine_distance(_unit(rng, n, 5))
            lists = knn(dm, k)
            got = k_reciprocal_sets(lists).toarray().astype(bool)
            assert np.array_equal(got, reciprocal_membership(lists))

    def test_mutuality_is_symmetric(self, rng):
        dm = pairwise_cosine_distance(_unit(rng, 30, 5))
        r = k_reciprocal_sets(knn(dm, 4)).toarray()
        assert np.array_equal(r, r.T)

    def test_reciprocal_set_accessor(self, rng):
        dm = pairwise_cosine_distance(_unit(rng, 20, 5))
        nbrs = neighbor_sets(dm, 4)
        dense = nbrs.reciprocal.toarray().astype(bool)
        for i in range(20):
            assert np.array_equal(nbrs.reciprocal_set(i), np.flatnonzero(dense[i]))


class TestJaccard:
    def test_matches_set_oracle(self, rng):
        for include_self in (True, False):
            for trial in range(6):
                n = int(rng.integers(6, 40))
                k = int(rng.integers(1, min(10, n - 1)))
                dm = pairwise_cosine_distance(_unit(rng, n, 5))
                nbrs = neighbor_sets(dm, k)
                got = jaccard_distance(nbrs, include_self=include_self)
                want = jaccard_from_sets(
                    nbrs.reciprocal.toarray().astype(bool), include_self)
                assert np.allclose(got.entries, want, atol=1e-12)

    def test_range_and_diagonal(self, rng):
        dm = pairwise_cosine_distance(_unit(rng, 30, 6))
        j = jaccard_distance(neighbor_sets(dm, 5))
        assert np.all(j.entries >= 0.0) and np.all(j.entries <= 1.0)
        assert np.all(np.diag(j.entries) == 0.0)
        assert np.array_equal(j.entries, j.entries.T)


class TestPipeline:
    def test_counts_two_matrices(self, rng):
        e = _unit(rng, 50, 6)
        ENTRY_COUNTER.reset()
        clustering_distance(e, k=8)
        assert ENTRY_COUNTER.total == 2 * 50 * 50

    def test_equals_staged_computation(self, rng):
        e = _unit(rng, 35, 6)
        got = clustering_distance(e, k=6)
        want = jaccard_distance(neighbor_sets(pairwise_cosine_distance(e), 6))
        assert np.array_equal(got.entries, want.entries)

    @given(n=st.integers(5, 25), k=st.integers(1, 6), seed=st.integers(0, 999))
    @settings(max_examples=30, deadline=None)
    def test_properties_hold_for_random_inputs(self, n, k, seed):
        if k >= n:
            k = n - 1
        e = _unit(np.random.default_rng(seed), n, 4)
        dm = clustering_distance(e, k=k)
        assert dm.entries.shape == (n, n)
        assert np.all(np.diag(dm.entries) == 0.0)
        assert np.array_equal(dm.entries, dm.entries.T)
        assert dm.entries.min() >= 0.0 and dm.entries.max() <= 1.0
