"""Data filters: ego blind spot filter, artificial blind spot, Octree Correspondence Filter.

All filters return subsets of their inputs; surviving points are copied from
the original clouds by index, never recomputed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from icpviz.cloud import PointCloud, voxel_keys
from icpviz.geometry import RigidTransform

DEFAULT_BLIND_SPOT_RADIUS = 5.0
# 0.1 m keeps the 0.05 m worst-case emergency-braking offset inside one voxel
DEFAULT_VOXEL_SIZE = 0.1


@dataclass(frozen=True)
class BlindSpotConfig:
    radius: float = DEFAULT_BLIND_SPOT_RADIUS
    estimate: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError(f"blind spot radius must be positive, got {self.radius}")


@dataclass(frozen=True)
class OcfConfig:
    voxel_size: float = DEFAULT_VOXEL_SIZE
    estimate: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self) -> None:
        if not self.voxel_size > 0:
            raise ValueError(f"voxel size must be positive, got {self.voxel_size}")


def _inside_circle(points: NDArray, center_xy: NDArray, radius: float) -> NDArray:
    dx = points[:, 0] - center_xy[0]
    dy = points[:, 1] - center_xy[1]
    return dx * dx + dy * dy <= radius * radius


def blind_spot_masks(P: PointCloud, Q: PointCloud, cfg: BlindSpotConfig) -> tuple[NDArray, NDArray]:
    """Keep-masks for ``P`` and ``Q``: points inside the other scan's blind spot are dropped.

    ``Q`` is tested against the translation of the estimate, ``P`` against the
    translation of its inverse. The z coordinate is ignored.
    """
    keep_q = ~_inside_circle(Q.points, cfg.estimate.translation, cfg.radius)
    keep_p = ~_inside_circle(P.points, cfg.estimate.inverse().translation, cfg.radius)
    return keep_p, keep_q


def ego_blind_spot_filter(
    P: PointCloud, Q: PointCloud, cfg: BlindSpotConfig
) -> tuple[PointCloud, PointCloud]:
    keep_p, keep_q = blind_spot_masks(P, Q, cfg)
    return P.subset(keep_p), Q.subset(keep_q)


def artificial_blind_spot_mask(cloud: PointCloud, r: float = DEFAULT_BLIND_SPOT_RADIUS) -> NDArray:
    if not r > 0:
        raise ValueError(f"radius must be positive, got {r}")
    return ~_inside_circle(cloud.points, cloud.sensor_origin, r)


def artificial_blind_spot(cloud: PointCloud, r: float = DEFAULT_BLIND_SPOT_RADIUS) -> PointCloud:
    """Remove every point within horizontal distance ``r`` of the cloud's sensor origin."""
    return cloud.subset(artificial_blind_spot_mask(cloud, r))


@dataclass(frozen=True)
class OcfResult:
    keep_p: NDArray
    keep_q: NDArray
    voxels_cleared_p: int
    voxels_cleared_q: int


def ocf_masks(P: PointCloud, Q: PointCloud, cfg: OcfConfig) -> OcfResult:
    """Voxel occupancy comparison of ``T_e(P)`` and ``Q``.

    A point survives iff its voxel is occupied in both clouds.
    """
    kp = voxel_keys(cfg.estimate.apply(P.points), cfg.voxel_size)
    kq = voxel_keys(Q.points, cfg.voxel_size)
    n_p = len(kp)
    if n_p == 0 or len(kq) == 0:
        # nothing can be shared; every occupied voxel is exclusive
        return OcfResult(
            np.zeros(n_p, bool),
            np.zeros(len(kq), bool),
            len(np.unique(kp, axis=0)),
            len(np.unique(kq, axis=0)),
        )
    uniq, inverse = np.unique(np.vstack([kp, kq]), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    in_p = np.zeros(len(uniq), bool)
    in_q = np.zeros(len(uniq), bool)
    in_p[inverse[:n_p]] = True
    in_q[inverse[n_p:]] = True
    both = in_p & in_q
    return OcfResult(
        both[inverse[:n_p]],
        both[inverse[n_p:]],
        int(np.count_nonzero(in_p & ~in_q)),
        int(np.count_nonzero(in_q & ~in_p)),
    )


def octree_correspondence_filter(
    P: PointCloud, Q: PointCloud, cfg: OcfConfig
) -> tuple[PointCloud, PointCloud]:
    res = ocf_masks(P, Q, cfg)
    return P.subset(res.keep_p), Q.subset(res.keep_q)
