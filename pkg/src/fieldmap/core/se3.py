"""Rigid-body poses with w-first unit quaternions (Hamilton product)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from fieldmap.errors import NonUnitQuaternion

_QUAT_TOL = 1e-6


def quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R) -> tuple[float, float, float, float]:
    x, y, z, w = Rotation.from_matrix(np.asarray(R, dtype=float)).as_quat()
    if w < 0:
        w, x, y, z = -w, -x, -y, -z
    return (float(w), float(x), float(y), float(z))


def _normalized(q):
    q = tuple(float(c) for c in q)
    n = np.sqrt(sum(c * c for c in q))
    if abs(n - 1.0) > _QUAT_TOL:
        raise NonUnitQuaternion(f"quaternion norm {n!r} deviates from 1 by more than {_QUAT_TOL}")
    return tuple(c / n for c in q)


@dataclass(frozen=True)
class PoseSE3:
    rotation: tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", _normalized(self.rotation))
        t = tuple(float(c) for c in self.translation)
        if len(t) != 3 or not all(np.isfinite(t)):
            raise ValueError("translation must be three finite numbers")
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "PoseSE3":
        return cls()

    @classmethod
    def from_matrix(cls, R, t) -> "PoseSE3":
        return cls(matrix_to_quat(R), tuple(np.asarray(t, dtype=float)))

    @classmethod
    def from_rotvec(cls, rotvec, t=(0.0, 0.0, 0.0)) -> "PoseSE3":
        return cls.from_matrix(Rotation.from_rotvec(np.asarray(rotvec, dtype=float)).as_matrix(), t)

    @property
    def R(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def t(self) -> np.ndarray:
        return np.array(self.translation)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def rotvec(self) -> np.ndarray:
        w, x, y, z = self.rotation
        return Rotation.from_quat([x, y, z, w]).as_rotvec()

    def compose(self, other: "PoseSE3") -> "PoseSE3":
        return se3_compose(self, other)

    def inverse(self) -> "PoseSE3":
        return se3_inverse(self)

    def apply(self, points):
        return se3_apply(self, points)

    def allclose(self, other: "PoseSE3", atol=1e-9) -> bool:
        q1 = np.array(self.rotation)
        q2 = np.array(other.rotation)
        same_rot = min(np.max(np.abs(q1 - q2)), np.max(np.abs(q1 + q2))) <= atol
        return bool(same_rot and np.allclose(self.t, other.t, rtol=0.0, atol=atol))


def se3_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """``a * b``: apply ``b`` first, then ``a``."""
    q = np.array(quat_multiply(a.rotation, b.rotation))
    q /= np.linalg.norm(q)
    t = a.R @ b.t + a.t
    return PoseSE3(tuple(q), tuple(t))


def se3_inverse(a: PoseSE3) -> PoseSE3:
    w, x, y, z = a.rotation
    q_inv = (w, -x, -y, -z)
    t = -(quat_to_matrix(q_inv) @ a.t)
    return PoseSE3(q_inv, tuple(t))


def se3_apply(a: PoseSE3, points):
    """Transform a point (3,) or an array of points (N, 3)."""
    pts = np.asarray(points, dtype=float)
    return pts @ a.R.T + a.t


def rotation_angle(R) -> float:
    """Angle of a rotation matrix in radians, robust near 0 and pi."""
    return float(np.linalg.norm(Rotation.from_matrix(np.asarray(R, dtype=float)).as_rotvec()))


def pose_error(estimate: PoseSE3, truth: PoseSE3) -> tuple[float, float]:
    """Translation (m) and rotation (rad) error between two poses."""
    delta = se3_compose(se3_inverse(truth), estimate)
    return float(np.linalg.norm(estimate.t - truth.t)), rotation_angle(delta.R)
