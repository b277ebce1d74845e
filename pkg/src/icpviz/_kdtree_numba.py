"""Exact k-nearest-neighbour kd-tree kernels compiled with numba.

Neighbours are ranked lexicographically by (squared distance, point index), so
equidistant candidates always resolve to the lowest index.
"""

from __future__ import annotations

import numpy as np

from icpviz._accel import njit

LEAF_SIZE = 16


@njit(cache=True, nogil=True)
def build_tree(points, leaf_size):
    n = points.shape[0]
    # leaves hold at least ceil(leaf_size / 2) points, so 4n/leaf_size nodes always suffice
    max_nodes = 4 * (n // max(leaf_size, 1) + 1) + 1
    perm = np.arange(n)
    start = np.empty(max_nodes, np.int64)
    stop = np.empty(max_nodes, np.int64)
    left = np.full(max_nodes, -1, np.int64)
    right = np.full(max_nodes, -1, np.int64)
    bmin = np.empty((max_nodes, 3))
    bmax = np.empty((max_nodes, 3))

    stack = np.empty(max_nodes, np.int64)
    start[0] = 0
    stop[0] = n
    n_nodes = 1
    top = 0
    stack[0] = 0
    while top >= 0:
        node = stack[top]
        top -= 1
        s = start[node]
        e = stop[node]
        for d in range(3):
            lo = np.inf
            hi = -np.inf
            for i in range(s, e):
                v = points[perm[i], d]
                if v < lo:
                    lo = v
                if v > hi:
                    hi = v
            bmin[node, d] = lo
            bmax[node, d] = hi
        if e - s <= leaf_size:
            continue
        dim = 0
        widest = bmax[node, 0] - bmin[node, 0]
        for d in range(1, 3):
            w = bmax[node, d] - bmin[node, d]
            if w > widest:
                widest = w
                dim = d
        seg = perm[s:e].copy()
        keys = np.empty(e - s)
        for i in range(e - s):
            keys[i] = points[seg[i], dim]
        order = np.argsort(keys, kind="mergesort")
        for i in range(e - s):
            perm[s + i] = seg[order[i]]
        mid = (s + e) // 2
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        start[lc] = s
        stop[lc] = mid
        start[rc] = mid
        stop[rc] = e
        left[node] = lc
        right[node] = rc
        top += 1
        stack[top] = lc
        top += 1
        stack[top] = rc
    return (
        perm,
        start[:n_nodes].copy(),
        stop[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        bmin[:n_nodes].copy(),
        bmax[:n_nodes].copy(),
    )


@njit(cache=True, nogil=True)
def _box_lower_bound(x0, x1, x2, bmin, bmax, node):
    acc = 0.0
    for d in range(3):
        if d == 0:
            v = x0
        elif d == 1:
            v = x1
        else:
            v = x2
        if v < bmin[node, d]:
            g = bmin[node, d] - v
            acc += g * g
        elif v > bmax[node, d]:
            g = v - bmax[node, d]
            acc += g * g
    return acc


@njit(cache=True, nogil=True)
def knn_query(points, perm, start, stop, left, right, bmin, bmax, queries, k):
    """``points`` must already be stored in tree order, i.e. ``original[perm]``."""
    m = queries.shape[0]
    n = points.shape[0]
    out_idx = np.empty((m, k), np.int64)
    out_d2 = np.empty((m, k))
    stack = np.empty(256, np.int64)
    best_d = np.empty(k)
    best_i = np.empty(k, np.int64)
    for qi in range(m):
        x0 = queries[qi, 0]
        x1 = queries[qi, 1]
        x2 = queries[qi, 2]
        for j in range(k):
            best_d[j] = np.inf
            best_i[j] = n
        top = 0
        stack[0] = 0
        while top >= 0:
            node = stack[top]
            top -= 1
            if _box_lower_bound(x0, x1, x2, bmin, bmax, node) > best_d[k - 1]:
                continue
            lc = left[node]
            if lc < 0:
                for i in range(start[node], stop[node]):
                    idx = perm[i]
                    dx = points[i, 0] - x0
                    dy = points[i, 1] - x1
                    dz = points[i, 2] - x2
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best_d[k - 1] or (d2 == best_d[k - 1] and idx < best_i[k - 1]):
                        j = k - 1
                        while j > 0 and (
                            best_d[j - 1] > d2 or (best_d[j - 1] == d2 and best_i[j - 1] > idx)
                        ):
                            best_d[j] = best_d[j - 1]
                            best_i[j] = best_i[j - 1]
                            j -= 1
                        best_d[j] = d2
                        best_i[j] = idx
                continue
            rc = right[node]
            dl = _box_lower_bound(x0, x1, x2, bmin, bmax, lc)
            dr = _box_lower_bound(x0, x1, x2, bmin, bmax, rc)
            # push the far child first so the near one is searched first
            if dl <= dr:
                stack[top + 1] = rc
                stack[top + 2] = lc
            else:
                stack[top + 1] = lc
                stack[top + 2] = rc
            top += 2
        for j in range(k):
            out_idx[qi, j] = best_i[j]
            out_d2[qi, j] = best_d[j]
    return out_idx, out_d2


@njit(cache=True, nogil=True)
def nn_query(points, perm, start, stop, left, right, bmin, bmax, queries):
    """Single nearest neighbour; same ranking as ``knn_query`` with ``k = 1``."""
    m = queries.shape[0]
    out_idx = np.empty(m, np.int64)
    out_d2 = np.empty(m)
    stack = np.empty(256, np.int64)
    n = points.shape[0]
    for qi in range(m):
        x0 = queries[qi, 0]
        x1 = queries[qi, 1]
        x2 = queries[qi, 2]
        best = np.inf
        best_i = n
        top = 0
        stack[0] = 0
        while top >= 0:
            node = stack[top]
            top -= 1
            if _box_lower_bound(x0, x1, x2, bmin, bmax, node) > best:
                continue
            lc = left[node]
            if lc < 0:
                for i in range(start[node], stop[node]):
                    dx = points[i, 0] - x0
                    dy = points[i, 1] - x1
                    dz = points[i, 2] - x2
                    d2 = dx * dx + dy * dy + dz * dz
                    if d2 < best or (d2 == best and perm[i] < best_i):
                        best = d2
                        best_i = perm[i]
                continue
            rc = right[node]
            dl = _box_lower_bound(x0, x1, x2, bmin, bmax, lc)
            dr = _box_lower_bound(x0, x1, x2, bmin, bmax, rc)
            if dl <= dr:
                stack[top + 1] = rc
                stack[top + 2] = lc
            else:
                stack[top + 1] = lc
                stack[top + 2] = rc
            top += 2
        out_idx[qi] = best_i
        out_d2[qi] = best
    return out_idx, out_d2


class NumbaKDTree:
    backend = "numba"

    def __init__(self, points: np.ndarray, leaf_size: int = LEAF_SIZE) -> None:
        self.points = np.ascontiguousarray(points, dtype=np.float64)
        self._arrays = build_tree(self.points, leaf_size)
        self._ordered = np.ascontiguousarray(self.points[self._arrays[0]])

    def knn(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        return knn_query(self._ordered, *self._arrays, q, k)

    def nn(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
        return nn_query(self._ordered, *self._arrays, q)
