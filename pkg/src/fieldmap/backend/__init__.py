"""Factor-graph back-end: stereo reprojection factors, Levenberg-Marquardt, tracking."""

from fieldmap.backend.factors import (
    OdometryFactor,
    PriorFactor,
    StereoFactor,
    exp_so3,
    log_so3,
    numeric_pose_jacobian,
    odometry_residual,
    prior_residual,
    retract,
    skew,
    stereo_jacobians,
    stereo_residuals,
)
from fieldmap.backend.graph import FactorGraph, OptimizeResult, optimize
from fieldmap.backend.slam import (
    BACKEND_FAILURE,
    LOST,
    TRACKING,
    SlamSystem,
    TrackState,
    distance_mapped,
)

__all__ = [
    "BACKEND_FAILURE",
    "LOST",
    "TRACKING",
    "FactorGraph",
    "OdometryFactor",
    "OptimizeResult",
    "PriorFactor",
    "SlamSystem",
    "StereoFactor",
    "TrackState",
    "distance_mapped",
    "exp_so3",
    "log_so3",
    "numeric_pose_jacobian",
    "odometry_residual",
    "optimize",
    "prior_residual",
    "retract",
    "skew",
    "stereo_jacobians",
    "stereo_residuals",
]
