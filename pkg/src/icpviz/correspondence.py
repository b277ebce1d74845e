"""Closest-point and reciprocal correspondence search."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from icpviz.cloud import NearestNeighborIndex, PointCloud, build_nn_index


@dataclass(frozen=True)
class PointCorrespondenceSet:
    """Pairs ``source[i] -> target[i]`` with their Euclidean distance in meters."""

    source: NDArray
    target: NDArray
    distance: NDArray

    def __len__(self) -> int:
        return len(self.source)

    def pairs(self) -> set[tuple[int, int]]:
        return set(zip(self.source.tolist(), self.target.tolist()))


def _points(cloud: PointCloud | ArrayLike) -> NDArray:
    if isinstance(cloud, PointCloud):
        return cloud.points
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def closest_point(
    P_transformed: PointCloud | ArrayLike, Q_index: NearestNeighborIndex
) -> PointCorrespondenceSet:
    """Pair every source point with its exact nearest neighbour in the target."""
    X = _points(P_transformed)
    if len(X) == 0:
        raise ValueError("source cloud is empty")
    target, dist = Q_index.query(X)
    return PointCorrespondenceSet(np.arange(len(X)), target, dist)


def reciprocal(
    P_transformed: PointCloud | ArrayLike,
    Q: PointCloud | ArrayLike,
    relaxation: float = 0.0,
    Q_index: NearestNeighborIndex | None = None,
    P_index: NearestNeighborIndex | None = None,
) -> PointCorrespondenceSet:
    """Keep ``p_i -> q_j`` only if ``q_j``'s own nearest source point lies within ``relaxation`` of ``p_i``.

    With ``relaxation == 0`` this is strict mutual nearest neighbours.
    """
    if relaxation < 0:
        raise ValueError(f"relaxation must be >= 0, got {relaxation}")
    X = _points(P_transformed)
    Y = _points(Q)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("both clouds must be non-empty")
    Q_index = Q_index or build_nn_index(Y)
    P_index = P_index or build_nn_index(X)
    fwd = closest_point(X, Q_index)
    targets, inv = np.unique(fwd.target, return_inverse=True)
    back, _ = P_index.query(Y[targets])
    partner = back[inv.ravel()]
    gap = np.linalg.norm(X - X[partner], axis=1)
    keep = (partner == fwd.source) | (gap <= relaxation)
    return PointCorrespondenceSet(fwd.source[keep], fwd.target[keep], fwd.distance[keep])
