"""Point clouds, exact nearest-neighbour search, local PCA and voxel occupancy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from icpviz._accel import default_backend
from icpviz.geometry import RigidTransform

DEFAULT_NORMAL_K = 10
# neighbourhoods whose largest covariance eigenvalue is below this are treated as a single point
_DEGENERATE_EIG = 1e-20
# a second eigenvalue this small relative to the first means a line: the normal is undefined
_RELATIVE_ZERO = 1e-12


def _readonly(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points with optional unit normals.

    ``normal_valid`` marks which normals are usable; flagged entries carry a
    zero vector and are skipped by the plane-based objectives.
    """

    points: NDArray
    normals: NDArray | None = None
    sensor_origin: NDArray = field(default_factory=lambda: np.zeros(3))
    normal_valid: NDArray | None = None

    def __post_init__(self) -> None:
        pts = np.array(self.points, dtype=np.float64)
        if pts.size == 0:
            pts = pts.reshape(0, 3)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain NaN or Inf")
        origin = np.array(self.sensor_origin, dtype=np.float64).reshape(3)
        object.__setattr__(self, "points", _readonly(pts))
        object.__setattr__(self, "sensor_origin", _readonly(origin))

        if self.normals is None:
            if self.normal_valid is not None:
                raise ValueError("normal_valid given without normals")
            return
        nrm = np.array(self.normals, dtype=np.float64).reshape(-1, 3) if len(pts) else np.zeros((0, 3))
        if nrm.shape != pts.shape:
            raise ValueError(f"normals shape {nrm.shape} does not match points {pts.shape}")
        valid = (
            np.ones(len(pts), dtype=bool)
            if self.normal_valid is None
            else np.array(self.normal_valid, dtype=bool).reshape(len(pts))
        )
        lengths = np.linalg.norm(nrm, axis=1)
        if np.any(np.abs(lengths[valid] - 1.0) > 1e-6):
            raise ValueError("valid normals must have unit length")
        nrm[~valid] = 0.0
        object.__setattr__(self, "normals", _readonly(nrm))
        object.__setattr__(self, "normal_valid", _readonly(valid))

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    def subset(self, selector: ArrayLike) -> PointCloud:
        """Keep points selected by a boolean mask or an index array, in order."""
        sel = np.asarray(selector)
        return PointCloud(
            self.points[sel],
            None if self.normals is None else self.normals[sel],
            self.sensor_origin,
            None if self.normal_valid is None else self.normal_valid[sel],
        )

    def transformed(self, T: RigidTransform) -> PointCloud:
        """Move points, normals and the sensor origin by ``T``."""
        return PointCloud(
            T.apply(self.points),
            None if self.normals is None else T.rotate(self.normals),
            T.apply(self.sensor_origin),
            self.normal_valid,
        )

    def with_normals(self, normals: NDArray, valid: NDArray) -> PointCloud:
        return PointCloud(self.points, normals, self.sensor_origin, valid)


class NearestNeighborIndex:
    """Exact nearest-neighbour index over one cloud.

    Ties are broken towards the lower point index. ``backend`` selects the
    numba kd-tree or the scipy-based fallback; both return identical results.
    """

    def __init__(self, points: ArrayLike, backend: str | None = None) -> None:
        pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise ValueError("cannot index an empty cloud")
        backend = backend or default_backend()
        if backend == "numba":
            from icpviz._kdtree_numba import NumbaKDTree

            self._impl = NumbaKDTree(pts)
        elif backend == "numpy":
            from icpviz._kdtree_numpy import NumpyKDTree

            self._impl = NumpyKDTree(pts)
        else:
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.points = self._impl.points

    def __len__(self) -> int:
        return len(self.points)

    def query(self, queries: ArrayLike) -> tuple[NDArray, NDArray]:
        """Nearest neighbour for each query row: ``(indices, distances)``."""
        idx, d2 = self._impl.nn(queries)
        return idx, np.sqrt(d2)

    def query_knn(self, queries: ArrayLike, k: int) -> tuple[NDArray, NDArray]:
        """``k`` nearest neighbours per query, sorted by ascending distance."""
        if not 1 <= k <= len(self):
            raise ValueError(f"k must lie in [1, {len(self)}], got {k}")
        idx, d2 = self._impl.knn(queries, k)
        return idx, np.sqrt(d2)


def build_nn_index(cloud: PointCloud | ArrayLike, backend: str | None = None) -> NearestNeighborIndex:
    points = cloud.points if isinstance(cloud, PointCloud) else cloud
    return NearestNeighborIndex(points, backend=backend)


def knn(index: NearestNeighborIndex, p: ArrayLike, k: int) -> list[tuple[int, float]]:
    idx, dist = index.query_knn(np.asarray(p, dtype=np.float64).reshape(1, 3), k)
    return [(int(i), float(d)) for i, d in zip(idx[0], dist[0])]


def covariance_eigen_batch(neighborhoods: ArrayLike, backend: str | None = None) -> tuple[NDArray, NDArray]:
    """Eigen-decompose the covariance of each (k, 3) neighbourhood in an (m, k, 3) stack.

    Returns eigenvalues (m, 3) in descending order and eigenvectors (m, 3, 3)
    with column ``i`` belonging to eigenvalue ``i``; every basis is right-handed.
    Covariance is normalised by ``k`` (population form).
    """
    nb = np.ascontiguousarray(neighborhoods, dtype=np.float64)
    if (backend or default_backend()) == "numba":
        from icpviz._eigen_numba import covariance_eigen_kernel

        return covariance_eigen_kernel(nb)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.matmul(centered.transpose(0, 2, 1), centered) / nb.shape[1]
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[:, ::-1]
    evecs = evecs[:, :, ::-1].copy()
    evecs[:, :, 2] = np.cross(evecs[:, :, 0], evecs[:, :, 1])
    return evals, evecs


def covariance_eigen(points: Sequence[ArrayLike] | NDArray) -> tuple[NDArray, NDArray]:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 3:
        raise ValueError(f"need at least 3 points, got {len(pts)}")
    evals, evecs = covariance_eigen_batch(pts[None])
    return evals[0], evecs[0]


def estimate_normals(
    cloud: PointCloud, k: int = DEFAULT_NORMAL_K, index: NearestNeighborIndex | None = None
) -> PointCloud:
    """PCA normals from the ``k``-neighbourhood (point included), oriented towards the sensor."""
    if k < 3 or len(cloud) < k:
        raise ValueError(f"need cloud size >= k >= 3 (size={len(cloud)}, k={k})")
    index = index or build_nn_index(cloud)
    nbr, _ = index.query_knn(cloud.points, k)
    evals, evecs = covariance_eigen_batch(cloud.points[nbr], index.backend)
    normals = evecs[:, :, 2].copy()
    valid = evals[:, 1] > np.maximum(_RELATIVE_ZERO * evals[:, 0], _DEGENERATE_EIG)
    towards = cloud.sensor_origin - cloud.points
    flip = np.einsum("ij,ij->i", normals, towards) < 0.0
    normals[flip] *= -1.0
    normals[~valid] = 0.0
    return cloud.with_normals(normals, valid)


def voxel_keys(points: ArrayLike, voxel_size: float) -> NDArray:
    """Integer voxel coordinates ``floor(p / s)``; voxels are half-open ``[i s, (i+1) s)``."""
    if not voxel_size > 0:
        raise ValueError(f"voxel size must be positive, got {voxel_size}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.floor(pts / voxel_size).astype(np.int64)


@dataclass(frozen=True)
class VoxelOccupancy:
    """Addressable voxel map: occupied voxel coordinate -> indices of the points inside."""

    voxel_size: float
    voxels: dict[tuple[int, int, int], NDArray]

    def __len__(self) -> int:
        return len(self.voxels)

    def __contains__(self, key: tuple[int, int, int]) -> bool:
        return tuple(key) in self.voxels

    def occupied(self) -> set[tuple[int, int, int]]:
        return set(self.voxels)


def build_voxel_occupancy(cloud: PointCloud | ArrayLike, voxel_size: float) -> VoxelOccupancy:
    points = cloud.points if isinstance(cloud, PointCloud) else cloud
    keys = voxel_keys(points, voxel_size)
    if len(keys) == 0:
        return VoxelOccupancy(float(voxel_size), {})
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    order = np.argsort(inverse.ravel(), kind="stable")
    bounds = np.searchsorted(inverse.ravel()[order], np.arange(len(uniq) + 1))
    voxels = {
        tuple(int(c) for c in uniq[v]): order[bounds[v] : bounds[v + 1]] for v in range(len(uniq))
    }
    return VoxelOccupancy(float(voxel_size), voxels)


# the voxel map stands in for the octree's leaf level
create_octree = build_voxel_occupancy
