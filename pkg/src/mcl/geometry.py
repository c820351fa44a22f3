"""Pairwise distances, kNN, k-reciprocal sets, and Jaccard distance.

Everything here is the substrate DBScan runs on. Distance matrices are dense
float64 and symmetric; every construction of an n x n matrix adds n^2 to the
module's allocation counter, which the cost profiler reads to reproduce the
quadratic memory scaling of a clustering pass.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

_ROW_CHUNK = 1024  # bound temporary buffers when n is large


class EntryCounter:
    """Thread-safe count of allocated pairwise distance entries."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._total = 0

    def add(self, entries: int) -> None:
        with self._lock:
            self._total += int(entries)

    @property
    def total(self) -> int:
        with self._lock:
            return self._total

    def reset(self) -> None:
        with self._lock:
            self._total = 0


ENTRY_COUNTER = EntryCounter()


@dataclass
class DistanceMatrix:
    entries: np.ndarray  # (n, n) float64, symmetric, zero diagonal
    kind: str  # "cosine" | "jaccard"

    @property
    def n(self) -> int:
        return self.entries.shape[0]


@dataclass
class NeighborSets:
    """kNN lists and the mutual (k-reciprocal) sets derived from them."""

    k: int
    knn: np.ndarray  # (n, k) int64, ascending distance, ties by lower index
    reciprocal: sp.csr_matrix = field(repr=False)  # (n, n) bool adjacency

    @property
    def n(self) -> int:
        return self.knn.shape[0]

    def reciprocal_set(self, i: int) -> np.ndarray:
        row = self.reciprocal.getrow(i)
        return np.sort(row.indices).astype(np.int64)


def pairwise_cosine_distance(embeddings: np.ndarray) -> DistanceMatrix:
    """1 - dot(e_i, e_j) over unit rows. Rows must be unit-norm within 1e-6."""
    e = np.asarray(embeddings, dtype=np.float64)
    if e.ndim != 2:
        raise ValueError("embeddings must be 2-D")
    if not np.isfinite(e).all():
        raise ValueError("non-finite embedding input")
    norms = np.linalg.norm(e, axis=1)
    if np.abs(norms - 1.0).max(initial=0.0) > 1e-6:
        raise ValueError("embedding rows must be unit-norm within 1e-6")
    d = e @ e.T
    # in place: a second n x n temporary would double peak memory
    d *= -1.0
    d += 1.0
    np.fill_diagonal(d, 0.0)
    ENTRY_COUNTER.add(d.shape[0] * d.shape[0])
    return DistanceMatrix(entries=d, kind="cosine")


def knn(dm: DistanceMatrix, k: int) -> np.ndarray:
    """Indices of the k nearest neighbors per row, self excluded.

    Ordered by ascending distance; exact ties resolved by lower index. Uses
    argpartition with a tie-widening fallback so the rule holds even when
    many entries at the cut boundary are equal.
    """
    n = dm.n
    if k >= n:
        raise ValueError(f"k={k} must be < n={n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    out = np.empty((n, k), dtype=np.int64)
    pad = min(32, n - 1 - k)
    m = k + pad
    ar = np.arange(n)
    for lo in range(0, n, _ROW_CHUNK):
        hi = min(lo + _ROW_CHUNK, n)
        block = dm.entries[lo:hi].copy()
        block[ar[lo:hi] - lo, ar[lo:hi]] = np.inf  # exclude self
        if m >= n - 1:
            cand = np.broadcast_to(ar, block.shape)
        else:
            cand = np.argpartition(block, m, axis=1)[:, : m + 1]
        cvals = np.take_along_axis(block, cand, axis=1)
        order = np.lexsort((cand, cvals), axis=1)
        cand = np.take_along_axis(cand, order, axis=1)
        cvals = np.take_along_axis(cvals, order, axis=1)
        out[lo:hi] = cand[:, :k]
        if m < n - 1:
            # a tie spilling past the padded candidate set needs an exact redo
            spill = cvals[:, k - 1] == cvals[:, m]
            for r in np.flatnonzero(spill):
                row = block[r]
                full = np.lexsort((ar, row))
                out[lo + r] = full[:k]
    return out


def k_reciprocal_sets(knn_idx: np.ndarray) -> sp.csr_matrix:
    """Boolean adjacency R with R[i,j] iff j in knn(i) and i in knn(j)."""
    n, k = knn_idx.shape
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = knn_idx.ravel()
    a = sp.csr_matrix(
        (np.ones(n * k, dtype=np.int8), (rows, cols)), shape=(n, n)
    )
    r = a.multiply(a.T).tocsr()
    r.eliminate_zeros()
    return r


def neighbor_sets(dm: DistanceMatrix, k: int) -> NeighborSets:
    lists = knn(dm, k)
    return NeighborSets(k=k, knn=lists, reciprocal=k_reciprocal_sets(lists))


def jaccard_distance(nbrs: NeighborSets, include_self: bool = True) -> DistanceMatrix:
    """1 - |S(i) & S(j)| / |S(i) | S(j)| over k-reciprocal sets.

    S(i) is reciprocal(i), plus {i} itself when include_self (the default).
    Pairs of empty sets get distance 1; the diagonal is 0. Intersections are
    accumulated sparsely (sets are tiny), the result matrix is dense.
    """
    n = nbrs.n
    s = nbrs.reciprocal.astype(np.int64)
    if include_self:
        s = (s + sp.identity(n, dtype=np.int64, format="csr")).tocsr()
        s.data[:] = 1
    sizes = np.asarray(s.getnnz(axis=1), dtype=np.int64)
    inter = (s @ s.T).tocoo()
    d = np.ones((n, n), dtype=np.float64)
    if inter.nnz:
        union = sizes[inter.row] + sizes[inter.col] - inter.data
        d[inter.row, inter.col] = 1.0 - inter.data / union
    np.fill_diagonal(d, 0.0)
    ENTRY_COUNTER.add(n * n)
    return DistanceMatrix(entries=d, kind="jaccard")


def clustering_distance(embeddings: np.ndarray, k: int,
                        include_self: bool = True) -> DistanceMatrix:
    """Full cosine -> kNN -> k-reciprocal -> Jaccard pipeline.

    Frees the intermediate cosine matrix before building the Jaccard one, so
    peak memory stays at a single n^2 float64 matrix.
    """
    cos = pairwise_cosine_distance(embeddings)
    lists = knn(cos, k)
    del cos
    nbrs = NeighborSets(k=k, knn=lists, reciprocal=k_reciprocal_sets(lists))
    return jaccard_distance(nbrs, include_self=include_self)
