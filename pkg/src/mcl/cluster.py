"""DBScan over a precomputed distance matrix.

Deterministic variant: cores are visited in ascending sample index, cluster
ids are issued in order of first core visited, and border points join the
cluster of the lowest-index core whose eps-neighborhood contains them.
A point is core iff it has >= min_pts neighbors at distance <= eps, not
counting itself.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import DistanceMatrix

_CHUNK = 512


@dataclass
class ClusterAssignment:
    labels: np.ndarray  # (n,) int64; -1 = outlier, else consecutive from 0
    num_clusters: int

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def num_outliers(self) -> int:
        return int((self.labels == -1).sum())

    def members(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.labels == k)


def dbscan(dm: DistanceMatrix, eps: float, min_pts: int) -> ClusterAssignment:
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    if min_pts < 1:
        raise ValueError(f"min_pts must be >= 1, got {min_pts}")
    d = dm.entries
    n = dm.n
    labels = np.full(n, -1, dtype=np.int64)
    if n == 0:
        return ClusterAssignment(labels=labels, num_clusters=0)

    # neighbor counts exclude self (diagonal is 0 <= eps, subtract it)
    counts = np.empty(n, dtype=np.int64)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        counts[lo:hi] = (d[lo:hi] <= eps).sum(axis=1) - 1
    core = counts >= min_pts

    cluster_id = 0
    for i in range(n):
        if not core[i] or labels[i] != -1:
            continue
        labels[i] = cluster_id
        frontier = np.array([i], dtype=np.int64)
        while frontier.size:
            reach = np.zeros(n, dtype=bool)
            for lo in range(0, frontier.size, _CHUNK):
                rows = frontier[lo:lo + _CHUNK]
                reach |= (d[rows] <= eps).any(axis=0)
            newly = reach & core & (labels == -1)
            labels[newly] = cluster_id
            frontier = np.flatnonzero(newly)
        cluster_id += 1

    # border points: non-core, within eps of some core; lowest-index core wins
    core_idx = np.flatnonzero(core)
    if core_idx.size:
        pending = np.flatnonzero(~core)
        for lo in range(0, pending.size, _CHUNK):
            rows = pending[lo:lo + _CHUNK]
            near = d[np.ix_(rows, core_idx)] <= eps
            has = near.any(axis=1)
            first = near.argmax(axis=1)
            hit = rows[has]
            labels[hit] = labels[core_idx[first[has]]]

    return ClusterAssignment(labels=labels, num_clusters=cluster_id)
