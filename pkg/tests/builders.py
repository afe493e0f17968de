"""Small synthetic problems shared by several test modules."""

import numpy as np

from fieldmap.backend import FactorGraph, OdometryFactor, PriorFactor, StereoFactor
from fieldmap.core import PoseSE3, StereoCamera, stereo_project

CAM = StereoCamera()


def ground_truth_world(rng, n_poses=8, n_points=200):
    """Camera poses moving along +x and points in front of them."""
    X = np.column_stack([rng.uniform(-0.3, 0.8, n_points), rng.uniform(-0.2, 0.2, n_points),
                         rng.uniform(0.5, 0.8, n_points)])
    poses = [PoseSE3.from_rotvec(rng.normal(size=3) * 0.01, (0.05 * k, 0.002 * k, 0.0)) for k in range(n_poses)]
    return poses, X


def perturb(pose, rng, trans=0.01, rot_deg=0.5):
    """Random perturbation of the given size (norms, not per axis)."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    shift = rng.normal(size=3)
    shift *= trans / np.linalg.norm(shift)
    delta = PoseSE3.from_rotvec(axis * np.deg2rad(rot_deg))
    return PoseSE3.from_matrix(pose.R @ delta.R, pose.t + shift)


def stereo_graph(poses, X, init_poses=None, init_points=None, cam=CAM, odometry=True):
    """Factor graph with every in-image stereo observation; the first pose is anchored."""
    g = FactorGraph(cam)
    init_poses = poses if init_poses is None else init_poses
    init_points = X if init_points is None else init_points
    for k, pose in enumerate(init_poses):
        g.add_pose(k, poses[0] if k == 0 else pose)
    for i, x in enumerate(init_points):
        g.add_landmark(i, x)
    g.add_factor(PriorFactor(0, poses[0], 1e-3, 1e-3))
    for k, pose in enumerate(poses):
        z = stereo_project(pose.inverse().apply(X), cam)
        for i, (uL, v, uR) in enumerate(z):
            if 0 < uL < cam.width and 0 < uR < cam.width and 0 < v < cam.height:
                g.add_factor(StereoFactor(k, i, (uL, v), uR))
        if k and odometry:
            g.add_factor(OdometryFactor(k - 1, k, poses[k - 1].inverse().compose(pose), 0.02, np.deg2rad(1)))
    return g
