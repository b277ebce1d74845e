"""KITTI odometry ingestion and curve-table serialisation."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from icpviz.cloud import PointCloud
from icpviz.geometry import RigidTransform

log = logging.getLogger(__name__)

_ORTHO_TOL = 1e-6


class FormatError(ValueError):
    pass


def load_velodyne_bin(path: str | os.PathLike) -> PointCloud:
    """Read a KITTI scan: little-endian float32 ``(x, y, z, reflectance)`` records."""
    raw = Path(path).read_bytes()
    if len(raw) % 16:
        offset = len(raw) - len(raw) % 16
        raise FormatError(f"{path}: truncated record at byte offset {offset} (file size {len(raw)})")
    data = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
    xyz = data[:, :3].astype(np.float64)
    finite = np.all(np.isfinite(xyz), axis=1)
    dropped = int(len(xyz) - np.count_nonzero(finite))
    if dropped:
        log.warning("%s: dropped %d non-finite points", path, dropped)
    return PointCloud(xyz[finite])


def write_velodyne_bin(cloud: PointCloud, path: str | os.PathLike) -> None:
    data = np.zeros((len(cloud), 4), dtype="<f4")
    data[:, :3] = cloud.points
    Path(path).write_bytes(data.tobytes())


def _orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def parse_pose_line(line: str, lineno: int = 1, source: str = "<string>") -> RigidTransform:
    tokens = line.split()
    if len(tokens) != 12:
        raise FormatError(f"{source}:{lineno}: expected 12 values, got {len(tokens)}")
    try:
        M = np.array([float(t) for t in tokens]).reshape(3, 4)
    except ValueError as exc:
        raise FormatError(f"{source}:{lineno}: {exc}") from None
    R = M[:, :3]
    drift = np.abs(R.T @ R - np.eye(3)).max()
    if drift > _ORTHO_TOL:
        log.info("%s:%d: re-orthonormalising rotation (drift %.2e)", source, lineno, drift)
        M[:, :3] = _orthonormalize(R)
    return RigidTransform.from_matrix(M)


def load_poses(path: str | os.PathLike) -> list[RigidTransform]:
    """One transform per non-empty line of 12 row-major ``[R | t]`` values."""
    poses = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if line.strip():
                poses.append(parse_pose_line(line, lineno, str(path)))
    return poses


def load_calibration(path: str | os.PathLike, key: str = "Tr") -> RigidTransform:
    """Read the ``Tr:`` (velodyne -> camera 0) entry of a KITTI ``calib.txt``."""
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            name, sep, rest = line.partition(":")
            if sep and name.strip() == key:
                return parse_pose_line(rest, lineno, str(path))
    raise FormatError(f"{path}: no {key!r} entry")


def relative_transform(pose_a: RigidTransform, pose_b: RigidTransform) -> RigidTransform:
    """``pose_a^-1 ∘ pose_b``: maps frame-b coordinates into frame a."""
    return pose_a.inverse() @ pose_b


def camera_to_lidar_poses(poses: list[RigidTransform], Tr: RigidTransform) -> list[RigidTransform]:
    Tr_inv = Tr.inverse()
    return [Tr_inv @ p @ Tr for p in poses]


@dataclass(frozen=True)
class KittiFrame:
    sequence: str
    frame_index: int
    cloud: PointCloud
    pose: RigidTransform


class KittiSequence:
    """Lazy access to ``<root>/sequences/<seq>/velodyne`` with lidar-frame ground-truth poses."""

    def __init__(self, root: str | os.PathLike, sequence: str) -> None:
        self.root = Path(root)
        self.sequence = f"{int(sequence):02d}" if str(sequence).isdigit() else str(sequence)
        self.seq_dir = self.root / "sequences" / self.sequence
        pose_file = self.root / "poses" / f"{self.sequence}.txt"
        if not pose_file.exists():
            pose_file = self.seq_dir / "poses.txt"
        calib = load_calibration(self.seq_dir / "calib.txt")
        self.poses = camera_to_lidar_poses(load_poses(pose_file), calib)

    def scan_path(self, index: int) -> Path:
        return self.seq_dir / "velodyne" / f"{index:06d}.bin"

    def frame(self, index: int) -> KittiFrame:
        if not 0 <= index < len(self.poses):
            raise IndexError(f"frame {index} outside sequence {self.sequence} ({len(self.poses)} poses)")
        return KittiFrame(self.sequence, index, load_velodyne_bin(self.scan_path(index)), self.poses[index])

    def relative(self, reference: int, source: int) -> RigidTransform:
        return relative_transform(self.poses[reference], self.poses[source])


def format_curve_table(u, rmse) -> str:
    lines = []
    for a, b in zip(u, rmse):
        right = "nan" if math.isnan(b) else f"{b:.6f}"
        lines.append(f"{a:.6f} {right}")
    return "\n".join(lines) + "\n"


def write_curve_table(curve, path: str | os.PathLike) -> None:
    """Two columns ``u rmse`` per line, fixed six decimals, ``nan`` where undefined, no header."""
    if len(curve) == 0:
        raise ValueError("curve is empty")
    Path(path).write_text(format_curve_table(curve.u, curve.rmse))


def read_curve_table(path: str | os.PathLike) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, ndmin=2)
    return data[:, 0], data[:, 1]
