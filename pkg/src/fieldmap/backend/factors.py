"""Factor residuals and Jacobians.

Poses are world-from-camera ``(R, t)`` and are perturbed on the right:
``R <- R Exp(phi)``, ``t <- t + delta``. The 6-vector tangent order is
``(phi, delta)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from fieldmap.core.se3 import PoseSE3
from fieldmap.core.types import StereoCamera


def skew(v) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def skew_many(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def exp_so3(phi) -> np.ndarray:
    """Rodrigues' formula."""
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    K = skew(phi)
    if theta < 1e-8:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * K @ K


def log_so3(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    if cos < 1.0 - 1e-6 and cos > -1.0 + 1e-6:
        theta = np.arccos(cos)
        w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
        return theta / (2.0 * np.sin(theta)) * w
    if cos >= 1.0 - 1e-6:
        # first-order expansion near the identity
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return Rotation.from_matrix(R).as_rotvec()


def retract(R, t, xi):
    """Apply a 6-vector tangent update to ``(R, t)``."""
    xi = np.asarray(xi, dtype=float)
    return R @ exp_so3(xi[:3]), t + xi[3:]


@dataclass
class StereoFactor:
    """Landmark observed in a rectified stereo pair; ``has_right`` False means left image only."""

    pose: int
    landmark: int
    uv_left: tuple[float, float]
    u_right: float = np.nan
    has_right: bool = True
    sigma: float = 1.0

    def measurement(self) -> np.ndarray:
        return np.array([self.uv_left[0], self.uv_left[1], self.u_right if self.has_right else 0.0])


@dataclass
class OdometryFactor:
    """Relative motion ``T_a^-1 T_b`` measured as ``relative``."""

    pose_a: int
    pose_b: int
    relative: PoseSE3
    sigma_translation: float
    sigma_rotation: float


@dataclass
class PriorFactor:
    pose: int
    prior: PoseSE3
    sigma_translation: float
    sigma_rotation: float


def stereo_residuals(R, t, X, meas, has_right, cam: StereoCamera):
    """Vectorised stereo reprojection residual (predicted minus measured).

    ``R`` (N,3,3), ``t`` (N,3), ``X`` (N,3) world points, ``meas`` (N,3)
    holding (u_left, v, u_right). Right-image rows are zeroed where
    ``has_right`` is False. Returns ``(residual (N,3), p_cam (N,3))``.
    """
    p = np.einsum("nji,nj->ni", R, X - t)
    z = p[:, 2]
    uL = cam.fx * p[:, 0] / z + cam.cx
    v = cam.fy * p[:, 1] / z + cam.cy
    uR = cam.fx * (p[:, 0] - cam.baseline) / z + cam.cx
    res = np.column_stack([uL, v, uR]) - meas
    res[:, 2] = np.where(has_right, res[:, 2], 0.0)
    return res, p


def stereo_jacobians(R, p, has_right, cam: StereoCamera):
    """Analytic Jacobians of :func:`stereo_residuals`.

    Returns ``(J_pose (N,3,6), J_point (N,3,3))``. With ``p = R^T (X - t)``,
    dp/dphi = [p]x, dp/dt = -R^T and dp/dX = R^T.
    """
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    n = len(p)
    J_proj = np.zeros((n, 3, 3))
    J_proj[:, 0, 0] = cam.fx / z
    J_proj[:, 0, 2] = -cam.fx * x / z**2
    J_proj[:, 1, 1] = cam.fy / z
    J_proj[:, 1, 2] = -cam.fy * y / z**2
    J_proj[:, 2, 0] = cam.fx / z
    J_proj[:, 2, 2] = -cam.fx * (x - cam.baseline) / z**2
    J_proj[:, 2, :] *= np.asarray(has_right, dtype=float)[:, None]
    Rt = np.transpose(R, (0, 2, 1))
    J_point = J_proj @ Rt
    J_pose = np.concatenate([J_proj @ skew_many(p), -J_point], axis=2)
    return J_pose, J_point


def _pose_arrays(pose: PoseSE3):
    return pose.R, pose.t


def odometry_residual(Ra, ta, Rb, tb, factor: OdometryFactor) -> np.ndarray:
    Rz, tz = _pose_arrays(factor.relative)
    r_rot = log_so3(Rz.T @ Ra.T @ Rb) / factor.sigma_rotation
    r_tr = (Ra.T @ (tb - ta) - tz) / factor.sigma_translation
    return np.concatenate([r_rot, r_tr])


def prior_residual(R, t, factor: PriorFactor) -> np.ndarray:
    Rz, tz = _pose_arrays(factor.prior)
    return np.concatenate([log_so3(Rz.T @ R) / factor.sigma_rotation,
                           (t - tz) / factor.sigma_translation])


def numeric_pose_jacobian(fn, R, t, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``fn(R, t)`` over the 6-vector pose tangent."""
    cols = []
    for k in range(6):
        xi = np.zeros(6)
        xi[k] = h
        plus = fn(*retract(R, t, xi))
        minus = fn(*retract(R, t, -xi))
        cols.append((plus - minus) / (2 * h))
    return np.column_stack(cols)
