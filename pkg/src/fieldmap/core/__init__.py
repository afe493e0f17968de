"""Domain types and geometry shared by every other fieldmap module."""

from fieldmap.core.camera import (
    depth_sigma,
    project,
    project_many,
    stereo_project,
    triangulate,
    triangulate_many,
)
from fieldmap.core.cloud import (
    concatenate,
    read_ply,
    transform_cloud,
    voxel_downsample,
    write_ply,
)
from fieldmap.core.ellipse import fit_ellipse
from fieldmap.core.se3 import PoseSE3, pose_error, se3_apply, se3_compose, se3_inverse
from fieldmap.core.types import (
    LEFT,
    RIGHT,
    Ellipse,
    ImagePoint,
    Landmark,
    PointCloud,
    SeedKeypoint,
    StereoCamera,
)

__all__ = [
    "LEFT",
    "RIGHT",
    "Ellipse",
    "ImagePoint",
    "Landmark",
    "PointCloud",
    "PoseSE3",
    "SeedKeypoint",
    "StereoCamera",
    "concatenate",
    "depth_sigma",
    "fit_ellipse",
    "pose_error",
    "project",
    "project_many",
    "read_ply",
    "se3_apply",
    "se3_compose",
    "se3_inverse",
    "stereo_project",
    "transform_cloud",
    "triangulate",
    "triangulate_many",
    "voxel_downsample",
    "write_ply",
]
