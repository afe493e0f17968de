"""Pinhole projection and rectified-stereo triangulation."""

from __future__ import annotations

import numpy as np

from fieldmap.core.types import LEFT, RIGHT, ImagePoint, StereoCamera
from fieldmap.errors import BehindCamera, NonPositiveDisparity

DEFAULT_MIN_DISPARITY = 0.5


def triangulate(left: ImagePoint, right: ImagePoint, cam: StereoCamera,
                d_min: float = DEFAULT_MIN_DISPARITY) -> np.ndarray:
    """Camera-frame point from a rectified stereo correspondence."""
    d = left[0] - right[0]
    if not d > d_min:
        raise NonPositiveDisparity(f"disparity {d:.3f} px is not above {d_min} px")
    z = cam.fx * cam.baseline / d
    x = (left[0] - cam.cx) * z / cam.fx
    y = (left[1] - cam.cy) * z / cam.fy
    return np.array([x, y, z])


def triangulate_many(left, right, cam: StereoCamera, d_min: float = DEFAULT_MIN_DISPARITY):
    """Vectorised :func:`triangulate`.

    Returns ``(points, valid)``; rows where the disparity is not above ``d_min``
    are NaN and flagged invalid instead of raising.
    """
    left = np.asarray(left, dtype=float).reshape(-1, 2)
    right = np.asarray(right, dtype=float).reshape(-1, 2)
    d = left[:, 0] - right[:, 0]
    valid = d > d_min
    z = np.full(len(d), np.nan)
    z[valid] = cam.fx * cam.baseline / d[valid]
    x = (left[:, 0] - cam.cx) * z / cam.fx
    y = (left[:, 1] - cam.cy) * z / cam.fy
    return np.column_stack([x, y, z]), valid


def project(point, cam: StereoCamera, side: str = LEFT) -> ImagePoint:
    x, y, z = (float(c) for c in point)
    if not z > 0:
        raise BehindCamera(f"point depth {z} is not positive")
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    if side == RIGHT:
        u -= cam.fx * cam.baseline / z
    elif side != LEFT:
        raise ValueError(f"unknown side {side!r}")
    return ImagePoint(u, v)


def project_many(points, cam: StereoCamera, side: str = LEFT) -> np.ndarray:
    """(N, 3) camera-frame points to (N, 2) pixels; no depth check."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    u = cam.fx * p[:, 0] / p[:, 2] + cam.cx
    v = cam.fy * p[:, 1] / p[:, 2] + cam.cy
    if side == RIGHT:
        u = u - cam.fx * cam.baseline / p[:, 2]
    return np.column_stack([u, v])


def stereo_project(points, cam: StereoCamera) -> np.ndarray:
    """(N, 3) camera-frame points to (N, 3) stereo measurements ``(u_left, v, u_right)``."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    inv_z = 1.0 / p[:, 2]
    u_l = cam.fx * p[:, 0] * inv_z + cam.cx
    v = cam.fy * p[:, 1] * inv_z + cam.cy
    u_r = u_l - cam.fx * cam.baseline * inv_z
    return np.column_stack([u_l, v, u_r])


def depth_sigma(z, cam: StereoCamera, sigma_px: float) -> np.ndarray:
    """First-order depth standard deviation for a disparity noise of ``sigma_px``.

    The disparity is a difference of two pixel measurements, hence the sqrt(2).
    """
    z = np.asarray(z, dtype=float)
    return z * z * np.sqrt(2.0) * sigma_px / (cam.fx * cam.baseline)
