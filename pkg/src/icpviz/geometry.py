"""Rigid transforms in SE(3) and the LERP/SLERP path used to query objectives.

Quaternions are stored scalar-first, ``(w, x, y, z)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np
from numpy.typing import ArrayLike, NDArray

_PARALLEL_DOT = 1.0 - 1e-9
_ANTIPODAL_DOT = 1e-12
# u values this close to an endpoint are snapped onto it so the grid hits T_0 / T_gt exactly.
_SNAP_TOL = 1e-12


def _readonly(a: NDArray) -> NDArray:
    a.setflags(write=False)
    return a


def quat_multiply(a: NDArray, b: NDArray) -> NDArray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: NDArray) -> NDArray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: NDArray) -> NDArray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R: ArrayLike) -> NDArray:
    """Convert a rotation matrix to a unit quaternion (Shepperd's method)."""
    R = np.asarray(R, dtype=np.float64)
    trace = R[0, 0] + R[1, 1] + R[2, 2]
    if trace > 0.0:
        s = 2.0 * np.sqrt(1.0 + trace)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    q = np.asarray(q)
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def quat_angle(a: ArrayLike, b: ArrayLike) -> float:
    """Rotation angle (radians, in [0, pi]) of the relative rotation between ``a`` and ``b``."""
    d = abs(float(np.dot(a, b)))
    return 2.0 * float(np.arccos(min(d, 1.0)))


@dataclass(frozen=True)
class RigidTransform:
    """An element of SE(3): unit quaternion rotation plus translation in meters."""

    rotation: NDArray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    translation: NDArray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        q = np.array(self.rotation, dtype=np.float64).reshape(4)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or n < 1e-12:
            raise ValueError("rotation quaternion must be finite and non-zero")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", _readonly(q / n))
        object.__setattr__(self, "translation", _readonly(t))

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_translation(cls, t: ArrayLike) -> RigidTransform:
        return cls(translation=np.asarray(t, dtype=np.float64))

    @classmethod
    def from_axis_angle(
        cls, axis: ArrayLike, angle: float, translation: ArrayLike = (0.0, 0.0, 0.0)
    ) -> RigidTransform:
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        q = np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis])
        return cls(q, translation)

    @classmethod
    def from_matrix(cls, M: ArrayLike) -> RigidTransform:
        """Build from a 4x4 homogeneous or 3x4 ``[R | t]`` matrix."""
        M = np.asarray(M, dtype=np.float64)
        if M.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"expected a 3x4 or 4x4 matrix, got shape {M.shape}")
        return cls(matrix_to_quat(M[:3, :3]), M[:3, 3])

    def rotation_matrix(self) -> NDArray:
        return quat_to_matrix(self.rotation)

    def matrix(self) -> NDArray:
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.translation
        return M

    def apply(self, points: ArrayLike) -> NDArray:
        """Return ``R p + t`` for a single 3-vector or an (N, 3) array."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation_matrix().T + self.translation

    def rotate(self, vectors: ArrayLike) -> NDArray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation_matrix().T

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        q = quat_multiply(self.rotation, other.rotation)
        t = self.rotation_matrix() @ other.translation + self.translation
        return RigidTransform(q, t)

    __matmul__ = compose

    def inverse(self) -> RigidTransform:
        qc = quat_conjugate(self.rotation)
        return RigidTransform(qc, -(quat_to_matrix(qc) @ self.translation))

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.matrix(), other.matrix(), rtol=0.0, atol=atol))

    def to_pose_line(self) -> str:
        """Row-major 3x4 ``[R | t]`` as 12 whitespace-separated decimals."""
        return " ".join(f"{v:.17g}" for v in self.matrix()[:3, :].ravel())

    def __repr__(self) -> str:
        q = ", ".join(f"{v:.6g}" for v in self.rotation)
        t = ", ".join(f"{v:.6g}" for v in self.translation)
        return f"RigidTransform(q=({q}), t=({t}))"


def lerp(t_i: ArrayLike, t_j: ArrayLike, u: float) -> NDArray:
    return (1.0 - u) * np.asarray(t_i, dtype=np.float64) + u * np.asarray(t_j, dtype=np.float64)


def _align_sign(q_i: NDArray, q_j: NDArray) -> NDArray:
    """Pick the representative of ``q_j`` on the short arc from ``q_i``.

    At dot == 0 (relative rotation of exactly pi) both arcs have equal length;
    the sign is then fixed so the largest-magnitude component of ``q_j`` is positive.
    """
    d = float(np.dot(q_i, q_j))
    if abs(d) < _ANTIPODAL_DOT:
        k = int(np.argmax(np.abs(q_j)))
        return q_j if q_j[k] > 0.0 else -q_j
    return q_j if d > 0.0 else -q_j


def slerp(q_i: ArrayLike, q_j: ArrayLike, u: float) -> NDArray:
    """Spherical linear interpolation ``q_i (q_i^-1 q_j)^u``; ``u`` may lie outside [0, 1]."""
    q_i = np.asarray(q_i, dtype=np.float64)
    q_i = q_i / np.linalg.norm(q_i)
    q_j = np.asarray(q_j, dtype=np.float64)
    q_j = _align_sign(q_i, q_j / np.linalg.norm(q_j))
    if float(np.dot(q_i, q_j)) > _PARALLEL_DOT:
        q = (1.0 - u) * q_i + u * q_j
        return q / np.linalg.norm(q)
    rel = quat_multiply(quat_conjugate(q_i), q_j)
    vnorm = float(np.linalg.norm(rel[1:]))
    half = np.arctan2(vnorm, rel[0])
    powed = np.concatenate([[np.cos(u * half)], np.sin(u * half) * rel[1:] / vnorm])
    q = quat_multiply(q_i, powed)
    return q / np.linalg.norm(q)


def interpolate(start: RigidTransform, end: RigidTransform, u: float) -> RigidTransform:
    """Translation by LERP and rotation by SLERP, each treated independently."""
    return RigidTransform(
        slerp(start.rotation, end.rotation, u), lerp(start.translation, end.translation, u)
    )


@dataclass(frozen=True)
class InterpolationPath:
    start: RigidTransform
    end: RigidTransform
    u: NDArray
    transforms: tuple[RigidTransform, ...]

    def __len__(self) -> int:
        return len(self.transforms)

    def __iter__(self) -> Iterator[tuple[float, RigidTransform]]:
        return zip(self.u.tolist(), self.transforms)

    def sample(self, u: float) -> RigidTransform:
        """The stored sample whose parameter is nearest to ``u``."""
        return self.transforms[int(np.argmin(np.abs(self.u - u)))]


def make_u_grid(u_min: float = -1.0, u_max: float = 2.0, n: int = 100) -> NDArray:
    if n < 2:
        raise ValueError(f"need at least 2 samples, got {n}")
    if not u_min < u_max:
        raise ValueError(f"u_min ({u_min}) must be smaller than u_max ({u_max})")
    u = np.linspace(u_min, u_max, n)
    for anchor in (0.0, 1.0):
        u[np.abs(u - anchor) < _SNAP_TOL] = anchor
    return _readonly(u)


def make_path(
    T_0: RigidTransform,
    T_gt: RigidTransform,
    u_min: float = -1.0,
    u_max: float = 2.0,
    n: int = 100,
) -> InterpolationPath:
    u = make_u_grid(u_min, u_max, n)
    return InterpolationPath(T_0, T_gt, u, tuple(interpolate(T_0, T_gt, float(v)) for v in u))
