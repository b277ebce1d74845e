"""Fallback nearest-neighbour search on top of ``scipy.spatial.cKDTree``.

cKDTree gives no guarantee about which of several equidistant points it
returns, so every candidate set is re-ranked here by the exact
(squared distance, index) order used by the numba kernels.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

_TIE_REL = 1e-9


def _sq_dist(points: np.ndarray, idx: np.ndarray, queries: np.ndarray) -> np.ndarray:
    dx = points[idx, 0] - queries[..., 0:1]
    dy = points[idx, 1] - queries[..., 1:2]
    dz = points[idx, 2] - queries[..., 2:3]
    return dx * dx + dy * dy + dz * dz


class NumpyKDTree:
    backend = "numpy"

    def __init__(self, points: np.ndarray) -> None:
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self._tree = cKDTree(self.points)

    def knn(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        m = len(q)
        if m == 0:
            return np.empty((0, k), np.int64), np.empty((0, k))
        kk = min(k + 1, n)
        _, cand = self._tree.query(q, k=kk)
        cand = np.asarray(cand, dtype=np.int64).reshape(m, kk)
        d2 = _sq_dist(self.points, cand, q)
        order = np.lexsort((cand, d2), axis=-1)
        cand = np.take_along_axis(cand, order, axis=-1)
        d2 = np.take_along_axis(d2, order, axis=-1)
        out_idx = cand[:, :k].copy()
        out_d2 = d2[:, :k].copy()
        if kk == k:
            return out_idx, out_d2

        # rows whose k-th and (k+1)-th candidates are (nearly) tied may hide
        # further equidistant points with lower indices
        kth = d2[:, k - 1]
        ambiguous = np.flatnonzero(d2[:, k] <= kth * (1.0 + _TIE_REL) + 1e-300)
        for row in ambiguous:
            radius = np.sqrt(kth[row]) * (1.0 + _TIE_REL) + 1e-15
            pool = np.asarray(self._tree.query_ball_point(q[row], radius), dtype=np.int64)
            pd2 = _sq_dist(self.points, pool, q[row])
            o = np.lexsort((pool, pd2))[:k]
            out_idx[row] = pool[o]
            out_d2[row] = pd2[o]
        return out_idx, out_d2

    def nn(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        idx, d2 = self.knn(queries, 1)
        return idx[:, 0].copy(), d2[:, 0].copy()
