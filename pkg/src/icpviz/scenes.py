"""Synthetic two-frame lidar scenes with per-point ground-truth labels.

The static world is sampled once, in the reference frame (frame n-1). The
source frame (frame n) sees the same static points moved by ``T_gt^-1``; a
dynamic box is displaced independently; each frame drops the points inside
its own circular blind spot.

A scene description is a plain dict (JSON on disk)::

    {
      "seed": 0,
      "noise_sigma": 0.0,
      "blind_spot_radius": 5.0,
      "ego_motion": {"translation": [3, 0, 0], "yaw_deg": 0},
      "ground": {"extent": [-40, 40, -10, 10], "z": -1.7, "n_points": 8000, "falloff": 8.0},
      "walls": [{"start": [-30, 12], "end": [30, 12], "z": [-1, 2], "n_points": 1500}],
      "poles": [{"position": [6, -6], "z": [0, 4], "spacing": 0.2}],
      "boxes": [{"center": [5, 3.5, 0.5], "size": [1.8, 1.6, 1.4],
                 "displacement": [2, 0, 0], "spacing": 0.1}]
    }

Planar primitives accept either ``spacing`` (regular lattice) or ``n_points``
(seeded uniform sampling, optionally thinned with distance by ``falloff``).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from icpviz.cloud import PointCloud
from icpviz.geometry import RigidTransform

STATIC, DYNAMIC, BLINDSPOT = "static", "dynamic", "blindspot"
_LABEL_DTYPE = "<U9"


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticScene:
    reference: PointCloud
    source: PointCloud
    T_gt: RigidTransform
    reference_labels: np.ndarray
    source_labels: np.ndarray
    # index of each source point's static counterpart in the reference cloud, -1 if none
    source_counterpart: np.ndarray

    def __post_init__(self) -> None:
        has = self.source_counterpart >= 0
        if np.any(has != (self.source_labels == STATIC)):
            raise SceneError("static labels and counterpart map disagree")
        moved = self.T_gt.apply(self.source.points[has])
        err = np.abs(moved - self.reference.points[self.source_counterpart[has]])
        if err.size and err.max() > 1e-12 * max(1.0, float(np.abs(self.reference.points).max())):
            raise SceneError(f"static source points do not map onto the reference (max error {err.max():.3e})")


def _pair(v, name: str) -> tuple[float, float]:
    a = tuple(float(x) for x in v)
    if len(a) != 2:
        raise SceneError(f"{name} must have two entries")
    return a


def _lattice(lo: float, hi: float, spacing: float) -> np.ndarray:
    if spacing <= 0:
        raise SceneError("spacing must be positive")
    n = int(np.floor((hi - lo) / spacing + 1e-9)) + 1
    return lo + spacing * np.arange(n)


def _sample_rect(rng: np.random.Generator, spec: dict, extent, name: str, dist2=None):
    """Sample (a, b) parameters on a rectangle: lattice or seeded uniform with optional falloff."""
    a0, a1, b0, b1 = extent
    if "spacing" in spec:
        a, b = np.meshgrid(_lattice(a0, a1, spec["spacing"]), _lattice(b0, b1, spec["spacing"]), indexing="ij")
        return a.ravel(), b.ravel()
    if "n_points" not in spec:
        raise SceneError(f"{name}: give either 'spacing' or 'n_points'")
    n = int(spec["n_points"])
    falloff = spec.get("falloff")
    out_a, out_b = [], []
    have = 0
    while have < n:
        a = rng.uniform(a0, a1, 2 * n)
        b = rng.uniform(b0, b1, 2 * n)
        if falloff:
            d2 = a * a + b * b if dist2 is None else dist2(a, b)
            keep = rng.uniform(size=2 * n) < 1.0 / (1.0 + d2 / float(falloff) ** 2)
            a, b = a[keep], b[keep]
        out_a.append(a)
        out_b.append(b)
        have += len(a)
    return np.concatenate(out_a)[:n], np.concatenate(out_b)[:n]


def _ground(rng, spec: dict) -> np.ndarray:
    ext = [float(v) for v in spec["extent"]]
    if len(ext) != 4:
        raise SceneError("ground.extent must be [x_min, x_max, y_min, y_max]")
    x, y = _sample_rect(rng, spec, ext, "ground")
    return np.column_stack([x, y, np.full(len(x), float(spec.get("z", -1.7)))])


def _wall(rng, spec: dict) -> np.ndarray:
    s = np.array(_pair(spec["start"], "wall.start"))
    e = np.array(_pair(spec["end"], "wall.end"))
    z0, z1 = _pair(spec.get("z", (-1.0, 2.0)), "wall.z")
    length = float(np.linalg.norm(e - s))

    def dist2(a, _z):
        return ((s + np.outer(a / length, e - s)) ** 2).sum(axis=1)

    a, z = _sample_rect(rng, spec, (0.0, length, z0, z1), "wall", dist2)
    xy = s + np.outer(a / length, e - s)
    return np.column_stack([xy, z])


def _pole(spec: dict) -> np.ndarray:
    x, y = _pair(spec["position"], "pole.position")
    z0, z1 = _pair(spec.get("z", (0.0, 4.0)), "pole.z")
    z = _lattice(z0, z1, float(spec.get("spacing", 0.1)))
    radius = float(spec.get("radius", 0.0))
    if radius <= 0:
        return np.column_stack([np.full(len(z), x), np.full(len(z), y), z])
    n_around = int(spec.get("n_around", 8))
    ang = 2 * np.pi * np.arange(n_around) / n_around
    zz, aa = np.meshgrid(z, ang, indexing="ij")
    return np.column_stack([x + radius * np.cos(aa).ravel(), y + radius * np.sin(aa).ravel(), zz.ravel()])


def _box_surface(spec: dict) -> np.ndarray:
    c = np.array([float(v) for v in spec["center"]])
    size = np.array([float(v) for v in spec["size"]])
    h = float(spec.get("spacing", 0.1))
    lo, hi = c - size / 2, c + size / 2
    axes = [_lattice(lo[d], hi[d], h) for d in range(3)]
    faces = []
    for d in range(3):
        o1, o2 = [a for a in range(3) if a != d]
        g1, g2 = np.meshgrid(axes[o1], axes[o2], indexing="ij")
        for level in (lo[d], hi[d]):
            f = np.empty((g1.size, 3))
            f[:, d] = level
            f[:, o1] = g1.ravel()
            f[:, o2] = g2.ravel()
            faces.append(f)
    pts = np.unique(np.round(np.vstack(faces), 12), axis=0)
    return pts


def ego_transform(spec: dict | None) -> RigidTransform:
    spec = spec or {}
    t = [float(v) for v in spec.get("translation", (0.0, 0.0, 0.0))]
    yaw = np.deg2rad(float(spec.get("yaw_deg", 0.0)))
    return RigidTransform.from_axis_angle((0, 0, 1), yaw, t)


def make_scene(spec: dict[str, Any], seed: int | None = None) -> SyntheticScene:
    seed = int(spec.get("seed", 0) if seed is None else seed)
    rng = np.random.default_rng(seed)
    parts = []
    if spec.get("ground"):
        parts.append(_ground(rng, spec["ground"]))
    parts += [_wall(rng, w) for w in spec.get("walls", [])]
    parts += [_pole(p) for p in spec.get("poles", [])]
    world = np.vstack(parts) if parts else np.empty((0, 3))
    if len(world) == 0:
        raise SceneError("scene has no static points")

    sigma = float(spec.get("noise_sigma", 0.0))
    if sigma > 0:
        world = world + rng.normal(0.0, sigma, world.shape)

    box_ref, box_src_world = [], []
    for b in spec.get("boxes", []):
        pts = _box_surface(b)
        if sigma > 0:
            pts = pts + rng.normal(0.0, sigma, pts.shape)
        box_ref.append(pts)
        box_src_world.append(pts + np.array([float(v) for v in b.get("displacement", (0, 0, 0))]))
    box_ref = np.vstack(box_ref) if box_ref else np.empty((0, 3))
    box_src_world = np.vstack(box_src_world) if box_src_world else np.empty((0, 3))

    T_gt = ego_transform(spec.get("ego_motion"))
    T_inv = T_gt.inverse()
    world_src = T_inv.apply(world)
    box_src = T_inv.apply(box_src_world) if len(box_src_world) else box_src_world

    r = float(spec.get("blind_spot_radius", 0.0))

    def visible(p: np.ndarray) -> np.ndarray:
        if r <= 0:
            return np.ones(len(p), bool)
        return p[:, 0] ** 2 + p[:, 1] ** 2 > r * r

    w_in_ref = visible(world)
    w_in_src = visible(world_src)
    ref_static = np.flatnonzero(w_in_ref)
    src_static = np.flatnonzero(w_in_src)
    ref_box = box_ref[visible(box_ref)]
    src_box = box_src[visible(box_src)]

    reference = PointCloud(np.vstack([world[ref_static], ref_box]))
    source = PointCloud(np.vstack([world_src[src_static], src_box]))

    ref_labels = np.full(len(reference), DYNAMIC, dtype=_LABEL_DTYPE)
    ref_labels[: len(ref_static)] = np.where(w_in_src[ref_static], STATIC, BLINDSPOT)
    src_labels = np.full(len(source), DYNAMIC, dtype=_LABEL_DTYPE)
    src_labels[: len(src_static)] = np.where(w_in_ref[src_static], STATIC, BLINDSPOT)

    world_to_ref = np.full(len(world), -1)
    world_to_ref[ref_static] = np.arange(len(ref_static))
    counterpart = np.full(len(source), -1)
    counterpart[: len(src_static)] = world_to_ref[src_static]

    return SyntheticScene(reference, source, T_gt, ref_labels, src_labels, counterpart)


def load_scene_spec(path: str | os.PathLike) -> dict[str, Any]:
    spec = json.loads(Path(path).read_text())
    if not isinstance(spec, dict):
        raise SceneError(f"{path}: scene description must be a JSON object")
    return spec
