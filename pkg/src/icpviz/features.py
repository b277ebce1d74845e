"""LOAM-style features: smoothness labels plus eigen-fitted edge lines and planar patches."""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from numpy.typing import ArrayLike, NDArray

from icpviz.cloud import NearestNeighborIndex, PointCloud, build_nn_index, covariance_eigen_batch

DEFAULT_NEIGHBORHOOD = 10
PLANAR_THRESHOLD = 0.1
EIGEN_SET_SIZE = 5
EIGEN_RATIO = 3.0
FLATNESS_MAX = 1e-4
HALF_WIDTH = 0.1

_ORIGIN_EPS = 1e-6
_DEGENERATE_EIG = 1e-20
# an eigenvalue this small relative to the largest one counts as zero
_RELATIVE_ZERO = 1e-12


class Label(IntEnum):
    PLANAR = 0
    EDGE = 1
    INVALID = 2

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class FeatureLabels:
    smoothness: NDArray
    label: NDArray

    def __len__(self) -> int:
        return len(self.label)

    @property
    def edge(self) -> NDArray:
        return self.label == Label.EDGE

    @property
    def planar(self) -> NDArray:
        return self.label == Label.PLANAR


@dataclass(frozen=True)
class EdgeLine:
    q_j: NDArray
    q_k: NDArray

    def __post_init__(self) -> None:
        if np.array_equal(self.q_j, self.q_k):
            raise ValueError("edge line needs two distinct points")


@dataclass(frozen=True)
class PlanarPatch:
    q_j: NDArray
    q_k: NDArray
    q_l: NDArray
    normal: NDArray


def smoothness(
    cloud: PointCloud,
    neighborhood_size: int = DEFAULT_NEIGHBORHOOD,
    planar_threshold: float = PLANAR_THRESHOLD,
    index: NearestNeighborIndex | None = None,
) -> FeatureLabels:
    """Per-point smoothness over the ``neighborhood_size`` nearest other points.

    Points closer than 1e-6 m to the sensor origin get ``nan`` and are labelled invalid.
    """
    n = len(cloud)
    k = neighborhood_size
    if k < 1 or n <= k:
        raise ValueError(f"cloud size ({n}) must exceed neighborhood size ({k})")
    index = index or build_nn_index(cloud)
    nbr, _ = index.query_knn(cloud.points, k + 1)
    own = nbr == np.arange(n)[:, None]
    keep = ~own
    # duplicates may push a point out of its own k+1 list; drop the farthest instead
    keep[~own.any(axis=1), k] = False
    nbr = nbr[keep].reshape(n, k)

    pts = cloud.points
    diff_sum = (pts[:, None, :] - pts[nbr]).sum(axis=1)
    radius = np.linalg.norm(pts, axis=1)
    invalid = radius < _ORIGIN_EPS
    s = np.full(n, np.nan)
    s[~invalid] = np.linalg.norm(diff_sum[~invalid], axis=1) / (k * radius[~invalid])
    label = np.where(s < planar_threshold, Label.PLANAR, Label.EDGE).astype(np.int8)
    label[invalid] = Label.INVALID
    return FeatureLabels(s, label)


def fit_edge_lines(
    neighborhoods: ArrayLike,
    ratio: float = EIGEN_RATIO,
    delta: float = HALF_WIDTH,
    backend: str | None = None,
) -> tuple[NDArray, NDArray, NDArray]:
    """Batched line fit over an (m, k, 3) stack: ``(accepted, q_j, q_k)``."""
    nb = np.asarray(neighborhoods, dtype=np.float64)
    evals, evecs = covariance_eigen_batch(nb, backend)
    lam = np.maximum(evals, 0.0)
    ok = (lam[:, 0] > _DEGENERATE_EIG) & (lam[:, 0] >= ratio * lam[:, 1])
    centroid = nb.mean(axis=1)
    step = evecs[:, :, 0] * delta
    return ok, centroid + step, centroid - step


def fit_planar_patches(
    neighborhoods: ArrayLike,
    ratio: float = EIGEN_RATIO,
    flatness_max: float = FLATNESS_MAX,
    delta: float = HALF_WIDTH,
    backend: str | None = None,
) -> tuple[NDArray, NDArray, NDArray, NDArray, NDArray]:
    """Batched patch fit over an (m, k, 3) stack: ``(accepted, q_j, q_k, q_l, normal)``."""
    nb = np.asarray(neighborhoods, dtype=np.float64)
    evals, evecs = covariance_eigen_batch(nb, backend)
    lam = np.maximum(evals, 0.0)
    two_large = lam[:, 1] > np.maximum(_RELATIVE_ZERO * lam[:, 0], _DEGENERATE_EIG)
    ok = (
        two_large
        & (lam[:, 1] >= ratio * lam[:, 2])
        & (lam[:, 0] >= ratio * lam[:, 2])
        & (lam[:, 2] < flatness_max)
    )
    centroid = nb.mean(axis=1)
    q_k = centroid + evecs[:, :, 0] * delta
    q_l = centroid + evecs[:, :, 1] * delta
    return ok, centroid, q_k, q_l, evecs[:, :, 2]


def fit_edge_line(
    neighbors: ArrayLike, ratio_threshold: float = EIGEN_RATIO, delta: float = HALF_WIDTH
) -> EdgeLine | None:
    nb = np.asarray(neighbors, dtype=np.float64).reshape(-1, 3)
    if len(nb) < 3:
        raise ValueError(f"need at least 3 neighbours, got {len(nb)}")
    ok, q_j, q_k = fit_edge_lines(nb[None], ratio_threshold, delta)
    return EdgeLine(q_j[0], q_k[0]) if ok[0] else None


def fit_planar_patch(
    neighbors: ArrayLike,
    ratio_threshold: float = EIGEN_RATIO,
    flatness_max: float = FLATNESS_MAX,
    delta: float = HALF_WIDTH,
) -> PlanarPatch | None:
    nb = np.asarray(neighbors, dtype=np.float64).reshape(-1, 3)
    if len(nb) < 3:
        raise ValueError(f"need at least 3 neighbours, got {len(nb)}")
    ok, q_j, q_k, q_l, normal = fit_planar_patches(nb[None], ratio_threshold, flatness_max, delta)
    return PlanarPatch(q_j[0], q_k[0], q_l[0], normal[0]) if ok[0] else None
