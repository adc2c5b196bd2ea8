"""Exact k-nearest-neighbor graphs over latent tables."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NeighborGraph:
    index: np.ndarray   # (N, K) neighbor rows, nearest first
    dist: np.ndarray    # (N, K) Euclidean distances

    @property
    def k(self) -> int:
        return self.index.shape[1]

    def mean_distance(self) -> float:
        return float(self.dist.mean())


def knn(table: np.ndarray, queries: np.ndarray, k: int, exclude=None):
    """Brute-force Euclidean kNN of ``queries`` among rows of ``table``.

    Ties go to the lower row index.  ``exclude[i]`` (a row index or -1)
    is never returned as a neighbor of query i.
    """
    table = np.asarray(table, np.float64)
    queries = np.asarray(queries, np.float64)
    nq = len(queries)
    idx = np.empty((nq, k), np.int64)
    dist = np.empty((nq, k), np.float64)
    chunk = max(1, (1 << 22) // max(1, table.size))
    for s in range(0, nq, chunk):
        q = queries[s:s + chunk]
        d2 = ((q[:, None, :] - table[None, :, :]) ** 2).sum(-1)
        if exclude is not None:
            ex = np.asarray(exclude[s:s + chunk])
            rows = np.nonzero(ex >= 0)[0]
            d2[rows, ex[rows]] = np.inf
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        idx[s:s + chunk] = order
        dist[s:s + chunk] = np.sqrt(np.take_along_axis(d2, order, 1))
    return idx, dist


def refresh_neighbors(latents: np.ndarray, k: int) -> NeighborGraph:
    """Exact kNN graph of a latent table, excluding each row itself."""
    n = len(latents)
    if n <= k:
        raise ValueError(f"need more than k={k} latents for a neighbor graph, got {n}")
    idx, dist = knn(latents, latents, k, exclude=np.arange(n))
    return NeighborGraph(idx, dist.astype(np.float32))
