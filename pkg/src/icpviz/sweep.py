"""Open-loop evaluation of an ICP pipeline along an interpolated transformation path.

The minimizer is removed from the loop: every sample ``T_u`` of the path is fed
to the data-processing stage, correspondences are searched again, and the
objective is reduced to an RMSE value.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterator, Sequence, Union

import numpy as np
from numpy.typing import NDArray

from icpviz import features as feat
from icpviz.cloud import DEFAULT_NORMAL_K, NearestNeighborIndex, PointCloud, build_nn_index, estimate_normals
from icpviz.correspondence import closest_point, reciprocal
from icpviz.filters import (
    DEFAULT_BLIND_SPOT_RADIUS,
    DEFAULT_VOXEL_SIZE,
    BlindSpotConfig,
    OcfConfig,
    artificial_blind_spot,
    ego_blind_spot_filter,
    octree_correspondence_filter,
)
from icpviz.geometry import RigidTransform, make_path
from icpviz.objectives import (
    ResidualSet,
    edge_line_distances,
    patch_distances,
    point_to_plane,
    point_to_point,
    rmse,
    symmetric,
)

log = logging.getLogger(__name__)

ESTIMATE_SOURCES = ("ground-truth", "identity", "previous")
Estimate = Union[str, RigidTransform]


class ConfigError(ValueError):
    pass


class Objective(str, Enum):
    POINT_TO_POINT = "point-to-point"
    POINT_TO_PLANE = "point-to-plane"
    SYMMETRIC = "symmetric"
    EDGE_TO_EDGE_LINE = "edge-to-edge-line"
    PLANAR_TO_PLANAR_PATCH = "planar-to-planar-patch"

    @property
    def feature_based(self) -> bool:
        return self in (Objective.EDGE_TO_EDGE_LINE, Objective.PLANAR_TO_PLANAR_PATCH)


def _estimate_to_json(e: Estimate):
    return e.to_pose_line() if isinstance(e, RigidTransform) else e


@dataclass(frozen=True)
class EgoBlindSpot:
    radius: float = DEFAULT_BLIND_SPOT_RADIUS
    estimate: Estimate = "ground-truth"

    def to_dict(self) -> dict:
        return {"type": "ego-blind-spot", "radius": self.radius, "estimate": _estimate_to_json(self.estimate)}


@dataclass(frozen=True)
class Ocf:
    voxel_size: float = DEFAULT_VOXEL_SIZE
    estimate: Estimate = "ground-truth"

    def to_dict(self) -> dict:
        return {"type": "ocf", "voxel_size": self.voxel_size, "estimate": _estimate_to_json(self.estimate)}


@dataclass(frozen=True)
class ArtificialBlindSpot:
    radius: float = DEFAULT_BLIND_SPOT_RADIUS

    def to_dict(self) -> dict:
        return {"type": "artificial-blind-spot", "radius": self.radius}


DataFilter = Union[EgoBlindSpot, Ocf, ArtificialBlindSpot]


@dataclass(frozen=True)
class ClosestPoint:
    def to_dict(self) -> dict:
        return {"type": "closest-point"}


@dataclass(frozen=True)
class Reciprocal:
    relaxation: float = 0.0

    def to_dict(self) -> dict:
        return {"type": "reciprocal", "relaxation": self.relaxation}


@dataclass(frozen=True)
class FeatureParams:
    neighborhood_size: int = feat.DEFAULT_NEIGHBORHOOD
    planar_threshold: float = feat.PLANAR_THRESHOLD
    eigen_set_size: int = feat.EIGEN_SET_SIZE
    ratio: float = feat.EIGEN_RATIO
    flatness_max: float = feat.FLATNESS_MAX
    half_width: float = feat.HALF_WIDTH
    planar_offset: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    """One ICP variant: data filters, correspondence mode, objective and sweep grid."""

    objective: Objective = Objective.POINT_TO_POINT
    data_filters: tuple[DataFilter, ...] = ()
    correspondence: ClosestPoint | Reciprocal = field(default_factory=ClosestPoint)
    features: FeatureParams = field(default_factory=FeatureParams)
    normal_k: int = DEFAULT_NORMAL_K
    u_min: float = -1.0
    u_max: float = 2.0
    n_samples: int = 100
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "objective", Objective(self.objective))
        object.__setattr__(self, "data_filters", tuple(self.data_filters))
        if not self.name:
            object.__setattr__(self, "name", self.objective.value)

    def validate(self) -> None:
        if isinstance(self.correspondence, Reciprocal) and self.objective.feature_based:
            raise ConfigError(f"reciprocal correspondences only apply to point-pair objectives, not {self.objective.value}")
        if self.n_samples < 2 or not self.u_min < self.u_max:
            raise ConfigError("need n_samples >= 2 and u_min < u_max")
        for f in self.data_filters:
            est = getattr(f, "estimate", None)
            if isinstance(est, str) and est not in ESTIMATE_SOURCES:
                raise ConfigError(f"unknown estimate source {est!r}; choose from {ESTIMATE_SOURCES}")

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "objective": self.objective.value,
            "data_filters": [f.to_dict() for f in self.data_filters],
            "correspondence": self.correspondence.to_dict(),
            "features": asdict(self.features),
            "feature_cloud": "filtered",
            "normal_k": self.normal_k,
            "u_min": self.u_min,
            "u_max": self.u_max,
            "n_samples": self.n_samples,
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class SweepCurve:
    """Sampled objective: ``rmse`` is ``nan`` where no correspondence survived."""

    u: NDArray
    rmse: NDArray
    n_correspondences: NDArray
    config_digest: str
    frame_ids: tuple[str, str] = ("reference", "source")
    name: str = ""

    def __len__(self) -> int:
        return len(self.u)

    @property
    def entries(self) -> list[tuple[float, float, int]]:
        return list(zip(self.u.tolist(), self.rmse.tolist(), self.n_correspondences.tolist()))

    def argmin(self) -> tuple[float, float]:
        """``(u, rmse)`` of the smallest defined sample; the first one wins ties."""
        if np.all(np.isnan(self.rmse)):
            return float("nan"), float("nan")
        i = int(np.nanargmin(self.rmse))
        return float(self.u[i]), float(self.rmse[i])


def resolve_estimate(
    estimate: Estimate, T_gt: RigidTransform, T_prev: RigidTransform | None
) -> RigidTransform:
    if isinstance(estimate, RigidTransform):
        return estimate
    if estimate == "ground-truth":
        return T_gt
    if estimate == "identity":
        return RigidTransform.identity()
    if estimate == "previous":
        if T_prev is None:
            raise ConfigError("estimate 'previous' requested but no previous-frame transform given")
        return T_prev
    raise ConfigError(f"unknown estimate source {estimate!r}")


def apply_filters(
    P: PointCloud,
    Q: PointCloud,
    filters: Sequence[DataFilter],
    T_gt: RigidTransform,
    T_prev: RigidTransform | None = None,
) -> tuple[PointCloud, PointCloud]:
    for f in filters:
        if isinstance(f, ArtificialBlindSpot):
            P, Q = artificial_blind_spot(P, f.radius), artificial_blind_spot(Q, f.radius)
        elif isinstance(f, EgoBlindSpot):
            P, Q = ego_blind_spot_filter(P, Q, BlindSpotConfig(f.radius, resolve_estimate(f.estimate, T_gt, T_prev)))
        elif isinstance(f, Ocf):
            P, Q = octree_correspondence_filter(P, Q, OcfConfig(f.voxel_size, resolve_estimate(f.estimate, T_gt, T_prev)))
        else:
            raise ConfigError(f"unknown data filter {f!r}")
    return P, Q


class _Evaluator:
    """Everything computed once before the sweep; ``__call__`` evaluates one ``T_u``."""

    def __init__(
        self,
        P: PointCloud,
        Q: PointCloud,
        config: PipelineConfig,
        backend: str | None,
        pair_cache: dict | None = None,
    ) -> None:
        self.config = config
        self.backend = backend
        # closest-point pairs depend only on filters, correspondence mode and T_u,
        # so point-pair objectives in one suite can share them
        self.pair_cache = pair_cache
        self.pair_key = json.dumps(
            [[f.to_dict() for f in config.data_filters], config.correspondence.to_dict(), backend], sort_keys=True
        )
        self.objective = config.objective
        self.empty = len(P) == 0 or len(Q) == 0
        if self.empty:
            return
        self.Q_index = build_nn_index(Q, backend)
        fp = config.features
        if self.objective in (Objective.POINT_TO_PLANE, Objective.SYMMETRIC):
            Q = estimate_normals(Q, min(config.normal_k, len(Q)), self.Q_index) if len(Q) >= 3 else Q
        if self.objective == Objective.SYMMETRIC and len(P) >= 3:
            P = estimate_normals(P, min(config.normal_k, len(P)), build_nn_index(P, backend))
        self.selected: NDArray | None = None
        if self.objective.feature_based:
            if len(P) <= fp.neighborhood_size or len(Q) < fp.eigen_set_size:
                self.selected = np.empty((0, 3))
            else:
                labels = feat.smoothness(P, fp.neighborhood_size, fp.planar_threshold, build_nn_index(P, backend))
                mask = labels.edge if self.objective == Objective.EDGE_TO_EDGE_LINE else labels.planar
                self.selected = P.points[mask]
        self.P, self.Q = P, Q

    def __call__(self, sample: tuple[int, RigidTransform]) -> ResidualSet | None:
        i, T = sample
        if self.empty:
            return None
        obj = self.objective
        fp = self.config.features
        if obj.feature_based:
            if len(self.selected) == 0:
                return None
            X = T.apply(self.selected)
            nbr, _ = self.Q_index.query_knn(X, fp.eigen_set_size)
            nb = self.Q.points[nbr]
            if obj == Objective.EDGE_TO_EDGE_LINE:
                ok, q_j, q_k = feat.fit_edge_lines(nb, fp.ratio, fp.half_width, self.backend)
                r = edge_line_distances(X[ok], q_j[ok], q_k[ok])
                return ResidualSet(r, obj.value)
            ok, q_j, q_k, q_l, _ = feat.fit_planar_patches(nb, fp.ratio, fp.flatness_max, fp.half_width, self.backend)
            r = patch_distances(X[ok], q_j[ok], q_k[ok], q_l[ok])
            return ResidualSet(r, obj.value, fp.planar_offset)

        if (obj == Objective.POINT_TO_PLANE and not self.Q.has_normals) or (
            obj == Objective.SYMMETRIC and not (self.P.has_normals and self.Q.has_normals)
        ):
            return None
        key = (self.pair_key, i)
        pairs = None if self.pair_cache is None else self.pair_cache.get(key)
        if pairs is None:
            X = T.apply(self.P.points)
            corr = self.config.correspondence
            if isinstance(corr, Reciprocal):
                pairs = reciprocal(X, self.Q.points, corr.relaxation, Q_index=self.Q_index, P_index=build_nn_index(X, self.backend))
            else:
                pairs = closest_point(X, self.Q_index)
            if self.pair_cache is not None:
                self.pair_cache[key] = pairs
        fn = {Objective.POINT_TO_POINT: point_to_point, Objective.POINT_TO_PLANE: point_to_plane, Objective.SYMMETRIC: symmetric}[obj]
        return fn(T, pairs, self.P, self.Q)


def _default_workers() -> int:
    return max(1, min(8, os.cpu_count() or 1))


def run_sweep(
    P: PointCloud,
    Q: PointCloud,
    T_0: RigidTransform,
    T_gt: RigidTransform,
    config: PipelineConfig,
    *,
    T_prev: RigidTransform | None = None,
    frame_ids: tuple[str, str] = ("reference", "source"),
    workers: int | None = None,
    backend: str | None = None,
) -> SweepCurve:
    """Sample ``config``'s objective along the LERP/SLERP path from ``T_0`` to ``T_gt``.

    ``P`` is the source cloud, ``Q`` the reference. Filters run once before the
    sweep, normals and smoothness labels are computed once on the filtered
    clouds, and correspondences are searched again at every sample.
    """
    return _run_sweep(P, Q, T_0, T_gt, config, T_prev, frame_ids, workers, backend, None)


def _run_sweep(P, Q, T_0, T_gt, config, T_prev, frame_ids, workers, backend, pair_cache) -> SweepCurve:
    config.validate()
    if len(P) == 0 or len(Q) == 0:
        raise ValueError("both clouds must be non-empty")
    Pf, Qf = apply_filters(P, Q, config.data_filters, T_gt, T_prev)
    evaluate = _Evaluator(Pf, Qf, config, backend, pair_cache)
    path = make_path(T_0, T_gt, config.u_min, config.u_max, config.n_samples)

    workers = workers or _default_workers()
    samples = list(enumerate(path.transforms))
    if workers == 1:
        results = [evaluate(s) for s in samples]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(evaluate, samples))

    values = np.full(len(path), np.nan)
    counts = np.zeros(len(path), dtype=np.int64)
    for i, res in enumerate(results):
        if res is not None and len(res):
            values[i] = rmse(res)
            counts[i] = len(res)
    return SweepCurve(path.u.copy(), values, counts, config.digest(), tuple(frame_ids), config.name)


@dataclass
class SuiteResult:
    curves: list[SweepCurve]
    failures: dict[str, str]

    def __iter__(self) -> Iterator[SweepCurve]:
        return iter(self.curves)

    def __len__(self) -> int:
        return len(self.curves)


def run_sweep_suite(
    P: PointCloud,
    Q: PointCloud,
    T_0: RigidTransform,
    T_gt: RigidTransform,
    configs: Sequence[PipelineConfig],
    *,
    T_prev: RigidTransform | None = None,
    frame_ids: tuple[str, str] = ("reference", "source"),
    workers: int | None = None,
    backend: str | None = None,
) -> SuiteResult:
    """One curve per config over a shared u grid; failing configs are reported, not raised.

    Configs with the same filters and correspondence mode reuse each other's
    point pairs, so curves are identical to separate ``run_sweep`` calls.
    """
    if not configs:
        raise ValueError("at least one config is required")
    grid = (configs[0].u_min, configs[0].u_max, configs[0].n_samples)
    curves: list[SweepCurve] = []
    failures: dict[str, str] = {}
    pair_cache: dict = {}
    for cfg in configs:
        try:
            if (cfg.u_min, cfg.u_max, cfg.n_samples) != grid:
                raise ConfigError(f"u grid {(cfg.u_min, cfg.u_max, cfg.n_samples)} differs from suite grid {grid}")
            curves.append(_run_sweep(P, Q, T_0, T_gt, cfg, T_prev, frame_ids, workers, backend, pair_cache))
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.warning("variant %s failed: %s", cfg.name, exc)
            failures[cfg.name] = str(exc)
    return SuiteResult(curves, failures)
