"""End-to-end runs: association plus SLAM over a range scene, and orbit reconstruction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fieldmap.association import (
    RIGHT_TO_LEFT,
    Assignment,
    MatcherParams,
    baseline_nn_match,
    filter_by_motion,
    structural_match,
)
from fieldmap.association.cost import BipartiteGraph
from fieldmap.backend import SlamSystem, TrackState, distance_mapped
from fieldmap.config import MatchConfig, RunConfig
from fieldmap.core.cloud import voxel_downsample
from fieldmap.core.se3 import PoseSE3, pose_error
from fieldmap.core.types import LEFT, RIGHT, ImagePoint, SeedKeypoint
from fieldmap.errors import BackendFailure, TrackLost
from fieldmap.icp import (
    FULL_CLOUD,
    IcpConfig,
    chain_register,
    fuse,
    registration_report,
    seed_center_clouds,
    seed_centers_from_depth,
)

STRUCTURAL = "structural"
BASELINE = "baseline"
MATCHERS = (STRUCTURAL, BASELINE)


def keypoints_from(points, frame_id: int = 0, side: str = LEFT, bboxes=None) -> list:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    out = []
    for k, (u, v) in enumerate(points):
        bbox = None if bboxes is None else tuple(float(c) for c in bboxes[k])
        out.append(SeedKeypoint(ImagePoint(float(u), float(v)), frame_id, side, bbox))
    return out


def associate(u_nodes, v_nodes, matcher: str, params: MatcherParams, match_cfg: MatchConfig) -> Assignment:
    """One stereo or temporal association followed by the motion filter.

    Both stereo (left to right) and forward travel move image content
    towards smaller u, so the same horizontal sign applies to both.
    """
    if matcher == STRUCTURAL:
        assignment = structural_match(u_nodes, v_nodes, params)
    elif matcher == BASELINE:
        assignment = baseline_nn_match(BipartiteGraph(list(u_nodes), list(v_nodes)), match_cfg.baseline_max_dist)
    else:
        raise ValueError(f"unknown matcher {matcher!r}; expected one of {MATCHERS}")
    if assignment.graph is None:
        assignment.graph = BipartiteGraph(list(u_nodes), list(v_nodes))
    return filter_by_motion(assignment, match_cfg.max_vertical, RIGHT_TO_LEFT)


@dataclass
class SlamRun:
    state: TrackState
    trajectory: list
    frame_ids: list
    landmarks: dict
    range_length: float
    inlier_counts: dict = field(default_factory=dict)

    @property
    def fraction(self) -> float:
        return self.state.distance_mapped / self.range_length

    def metrics(self) -> dict:
        return {
            "distance_mapped": self.state.distance_mapped,
            "fraction": self.fraction,
            "frames_tracked": self.state.frames_tracked,
            "failure_mode": self.state.failure_mode,
        }


def run_slam(scene, run_config: Optional[RunConfig] = None, matcher: str = STRUCTURAL,
             initial_motion: Optional[PoseSE3] = None) -> SlamRun:
    """Track a range scene frame by frame until the end or the first failure.

    ``initial_motion`` seeds the constant-velocity prior for the second frame;
    by default the nominal travel per frame along +x.
    """
    cfg = run_config or RunConfig(scene=scene.config)
    cam = scene.camera
    params = cfg.match.matcher_params(cam.width)
    if initial_motion is None:
        initial_motion = PoseSE3(translation=(scene.config.trajectory.speed, 0.0, 0.0))
    slam = SlamSystem(cam, cfg.backend, range_length=scene.config.range_length,
                      initial_pose=scene.poses[0], initial_motion=initial_motion,
                      min_disparity=cfg.match.min_disparity)
    prev_left = None
    for k, det in enumerate(scene.detections):
        left = keypoints_from(det[LEFT].keypoints, k, LEFT)
        right = keypoints_from(det[RIGHT].keypoints, k, RIGHT)
        stereo = associate(left, right, matcher, params, cfg.match)
        temporal = associate(prev_left, left, matcher, params, cfg.match) if prev_left is not None else None
        try:
            slam.add_frame(k, det[LEFT].keypoints, det[RIGHT].keypoints, stereo, temporal)
        except (TrackLost, BackendFailure):
            break
        prev_left = left
    return SlamRun(slam.state, slam.trajectory, list(slam.frame_ids), dict(slam.graph.landmarks),
                   scene.config.range_length, dict(slam.inlier_counts))


def ground_truth_distance(scene) -> float:
    return distance_mapped(scene.poses, len(scene.poses) - 1, scene.config.range_length)[0]


@dataclass
class ReconstructionRun:
    mode: str
    poses: list  # refined world-from-camera poses
    registrations: list
    fused: object  # PointCloud in world coordinates
    skipped_seeds: int = 0

    def final_pose_error(self, truth) -> tuple:
        return pose_error(self.poses[-1], truth[-1])

    def report(self) -> str:
        return registration_report(self.registrations)


def registration_clouds(scene, mode: str, run_config: Optional[RunConfig] = None, matcher: Optional[str] = None):
    """Per-frame clouds used for registration, in left-camera coordinates.

    Full clouds are voxel-downsampled to ``icp.registration_voxel`` first.
    Seed centers come from the left detections lifted with the full-resolution
    dense disparity, or, when ``matcher`` is given, from stereo-matched keypoints.
    """
    cfg = run_config or RunConfig(scene=scene.config)
    if mode == FULL_CLOUD:
        cell = cfg.icp.registration_voxel
        return [voxel_downsample(c, cell) if cell > 0 else c for c in scene.clouds], 0
    cam = scene.camera
    d_min = cfg.match.min_disparity
    if matcher is None:
        clouds, skipped = [], 0
        for k, det in enumerate(scene.detections):
            left = keypoints_from(det[LEFT].keypoints, k, LEFT)
            cloud, n = seed_centers_from_depth(left, scene.clouds[k], cam, d_min=d_min)
            clouds.append(cloud)
            skipped += n
        return clouds, skipped
    params = cfg.match.matcher_params(cam.width)
    frames = []
    for k, det in enumerate(scene.detections):
        left = keypoints_from(det[LEFT].keypoints, k, LEFT)
        right = keypoints_from(det[RIGHT].keypoints, k, RIGHT)
        frames.append((left, right, associate(left, right, matcher, params, cfg.match).pairs()))
    return seed_center_clouds(frames, cam, d_min)


def run_reconstruction(scene, run_config: Optional[RunConfig] = None, mode: Optional[str] = None,
                       matcher: Optional[str] = None) -> ReconstructionRun:
    """Chained ICP over an orbit scene, then fusion of the dense clouds."""
    if scene.clouds is None or scene.fk_poses is None:
        raise ValueError("reconstruction needs an orbit scene with clouds and FK poses")
    cfg = run_config or RunConfig(scene=scene.config)
    icp_cfg = IcpConfig.from_section(cfg.icp, mode)
    clouds, skipped = registration_clouds(scene, icp_cfg.mode, cfg, matcher)
    poses, report = chain_register(clouds, scene.fk_poses, icp_cfg)
    fused = fuse(list(zip(scene.clouds, poses)), cfg.icp.voxel)
    return ReconstructionRun(icp_cfg.mode, poses, report, fused, skipped)
