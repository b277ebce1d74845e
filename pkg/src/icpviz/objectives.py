"""Per-correspondence residuals for the five objectives, and RMSE aggregation.

Residuals are kept unsquared; squaring happens once, in :func:`rmse`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from icpviz.cloud import PointCloud
from icpviz.correspondence import PointCorrespondenceSet
from icpviz.features import EdgeLine, PlanarPatch
from icpviz.geometry import RigidTransform

_DEGENERATE_CROSS = 1e-12


class NoCorrespondencesError(ValueError):
    """Raised when an objective is aggregated over zero surviving correspondences."""


@dataclass(frozen=True)
class ResidualSet:
    residuals: NDArray
    metric_name: str
    offset: float = 0.0

    def __post_init__(self) -> None:
        r = np.asarray(self.residuals, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(r)):
            raise ValueError("residuals must be finite")
        object.__setattr__(self, "residuals", r)

    def __len__(self) -> int:
        return len(self.residuals)


def point_to_point(
    T: RigidTransform, pairs: PointCorrespondenceSet, P: PointCloud, Q: PointCloud
) -> ResidualSet:
    X = T.apply(P.points[pairs.source])
    return ResidualSet(np.linalg.norm(X - Q.points[pairs.target], axis=1), "point-to-point")


def point_to_plane(
    T: RigidTransform, pairs: PointCorrespondenceSet, P: PointCloud, Q: PointCloud
) -> ResidualSet:
    if not Q.has_normals:
        raise ValueError("point-to-plane needs normals on the target cloud")
    use = Q.normal_valid[pairs.target]
    src, tgt = pairs.source[use], pairs.target[use]
    X = T.apply(P.points[src])
    r = np.einsum("ij,ij->i", X - Q.points[tgt], Q.normals[tgt])
    return ResidualSet(r, "point-to-plane")


def symmetric(
    T: RigidTransform, pairs: PointCorrespondenceSet, P: PointCloud, Q: PointCloud
) -> ResidualSet:
    """Projection onto ``n_p + n_q``; the source normal is used as stored, not rotated by ``T``."""
    if not (P.has_normals and Q.has_normals):
        raise ValueError("symmetric objective needs normals on both clouds")
    use = P.normal_valid[pairs.source] & Q.normal_valid[pairs.target]
    src, tgt = pairs.source[use], pairs.target[use]
    X = T.apply(P.points[src])
    r = np.einsum("ij,ij->i", X - Q.points[tgt], P.normals[src] + Q.normals[tgt])
    return ResidualSet(r, "symmetric")


def edge_line_distances(X: ArrayLike, q_j: ArrayLike, q_k: ArrayLike) -> NDArray:
    X, q_j, q_k = (np.asarray(a, dtype=np.float64).reshape(-1, 3) for a in (X, q_j, q_k))
    base = np.linalg.norm(q_j - q_k, axis=1)
    if np.any(base == 0.0):
        raise ValueError("edge line endpoints coincide")
    return np.linalg.norm(np.cross(X - q_j, X - q_k), axis=1) / base


def patch_distances(X: ArrayLike, q_j: ArrayLike, q_k: ArrayLike, q_l: ArrayLike) -> NDArray:
    X, q_j, q_k, q_l = (np.asarray(a, dtype=np.float64).reshape(-1, 3) for a in (X, q_j, q_k, q_l))
    cross = np.cross(q_j - q_k, q_j - q_l)
    area = np.linalg.norm(cross, axis=1)
    scale = np.maximum(np.linalg.norm(q_j - q_k, axis=1) * np.linalg.norm(q_j - q_l, axis=1), 1e-300)
    if np.any(area <= _DEGENERATE_CROSS * scale):
        raise ValueError("planar patch points are collinear")
    return np.abs(np.einsum("ij,ij->i", X - q_j, cross)) / area


def edge_to_edge_line(
    T: RigidTransform, edge_points: ArrayLike, lines: Sequence[EdgeLine]
) -> ResidualSet:
    X = T.apply(np.asarray(edge_points, dtype=np.float64).reshape(-1, 3))
    if len(X) != len(lines):
        raise ValueError("need exactly one line per edge point")
    if not lines:
        return ResidualSet(np.empty(0), "edge-to-edge-line")
    q_j = np.array([ln.q_j for ln in lines])
    q_k = np.array([ln.q_k for ln in lines])
    return ResidualSet(edge_line_distances(X, q_j, q_k), "edge-to-edge-line")


def planar_to_planar_patch(
    T: RigidTransform,
    planar_points: ArrayLike,
    patches: Sequence[PlanarPatch],
    offset: float = 0.0,
) -> ResidualSet:
    X = T.apply(np.asarray(planar_points, dtype=np.float64).reshape(-1, 3))
    if len(X) != len(patches):
        raise ValueError("need exactly one patch per planar point")
    if not patches:
        return ResidualSet(np.empty(0), "planar-to-planar-patch", offset)
    q = [np.array([getattr(pt, a) for pt in patches]) for a in ("q_j", "q_k", "q_l")]
    return ResidualSet(patch_distances(X, *q), "planar-to-planar-patch", offset)


def sum_of_squares(res: ResidualSet) -> float:
    return float(np.sum(res.residuals**2))


def rmse(res: ResidualSet) -> float:
    """``sqrt(mean(r^2))`` minus the residual set's offset."""
    if len(res) == 0:
        raise NoCorrespondencesError(f"{res.metric_name}: no correspondences survived")
    return float(np.sqrt(np.mean(res.residuals**2))) - res.offset
