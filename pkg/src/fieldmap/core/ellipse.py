"""Moment-based ellipse fit to a binary segmentation mask."""

from __future__ import annotations

import numpy as np

from fieldmap.core.types import Ellipse, ImagePoint
from fieldmap.errors import DegenerateMask

MIN_PIXELS = 5


def fit_ellipse(mask) -> Ellipse:
    """Fit the ellipse with the same first and second moments as ``mask``.

    The center is the foreground centroid in (u, v) = (column, row). For a
    uniformly filled ellipse the central second moment along an axis equals
    a**2 / 4, so semi-axes are twice the square roots of the covariance
    eigenvalues. ``rotation`` is the angle of the major axis from +u, in [0, pi).
    """
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise ValueError("mask must be a 2D array")
    rows, cols = np.nonzero(mask)
    n = rows.size
    if n < MIN_PIXELS:
        raise DegenerateMask(f"mask has {n} foreground pixels, need at least {MIN_PIXELS}")

    u = cols.astype(float)
    v = rows.astype(float)
    cu = u.sum() / n
    cv = v.sum() / n
    du = u - cu
    dv = v - cv
    cov = np.array([[du @ du, du @ dv], [du @ dv, dv @ dv]]) / n

    evals, evecs = np.linalg.eigh(cov)
    minor, major = evals
    # A straight line of pixels has zero spread across it.
    if minor <= 1e-12 * max(major, 1.0):
        raise DegenerateMask("foreground pixels are collinear")

    angle = 0.5 * np.arctan2(2.0 * cov[0, 1], cov[0, 0] - cov[1, 1])
    angle = float(np.mod(angle, np.pi))
    if np.isclose(angle, np.pi, rtol=0.0, atol=1e-12):
        angle = 0.0
    return Ellipse(
        center=ImagePoint(float(cu), float(cv)),
        semi_axes=(2.0 * float(np.sqrt(major)), 2.0 * float(np.sqrt(minor))),
        rotation=angle,
    )
