"""Point-to-point ICP refinement of arm poses and cloud fusion.

Two registration modes are supported: the dense per-frame stereo cloud
(``full_cloud``) and the sparse cloud of triangulated seed centers
(``seed_centers``). Frames are chained, each one registered to the previous
refined frame, and the refined poses are used to fuse all clouds into one
voxel-downsampled model.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from fieldmap.core.camera import DEFAULT_MIN_DISPARITY, triangulate_many
from fieldmap.core.cloud import DEFAULT_VOXEL, concatenate, transform_cloud, voxel_downsample
from fieldmap.core.se3 import PoseSE3, se3_compose, se3_inverse
from fieldmap.core.types import PointCloud, StereoCamera
from fieldmap.errors import Degenerate, InsufficientOverlap, NoGroundTruth

log = logging.getLogger(__name__)

FULL_CLOUD = "full_cloud"
SEED_CENTERS = "seed_centers"
MODES = (FULL_CLOUD, SEED_CENTERS)
DEFAULT_RADIUS = {FULL_CLOUD: 0.02, SEED_CENTERS: 0.05}
DISPARITY_WINDOW = 5.0  # px


@dataclass
class IcpConfig:
    mode: str = SEED_CENTERS
    max_iterations: int = 50
    correspondence_radius: Optional[float] = None  # None picks the per-mode default
    convergence_tol: float = 1e-6
    trim_fraction: float = 0.1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown ICP mode {self.mode!r}")
        if self.correspondence_radius is None:
            self.correspondence_radius = DEFAULT_RADIUS[self.mode]
        if not self.correspondence_radius > 0:
            raise ValueError("correspondence_radius must be positive")
        if not 0.0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must lie in [0, 0.5)")
        if not (isinstance(self.max_iterations, int) and self.max_iterations >= 1):
            raise ValueError("max_iterations must be a positive integer")
        if self.convergence_tol < 0:
            raise ValueError("convergence_tol must be non-negative")

    @classmethod
    def from_section(cls, section, mode: Optional[str] = None) -> "IcpConfig":
        """Build from the ``[icp]`` section of a run configuration."""
        mode = mode or section.mode
        radius = section.radius_full_cloud if mode == FULL_CLOUD else section.radius_seed_centers
        return cls(mode, section.max_iterations, radius, section.convergence_tol, section.trim_fraction)


@dataclass
class IcpResult:
    transform: PoseSE3  # maps source coordinates into target coordinates
    rms_error: float
    iterations: int
    converged: bool
    inlier_count: int
    rms_history: list = field(default_factory=list)


def rigid_fit(src: np.ndarray, dst: np.ndarray):
    """Least-squares rotation and translation with ``dst ~ R @ src + t`` (no scale).

    Raises Degenerate when the points are (nearly) collinear, because the
    rotation about the common line is then unobservable.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    a = src - mu_s
    b = dst - mu_d
    sv_src = np.linalg.svd(a, compute_uv=False)
    if len(src) < 3 or sv_src[0] == 0 or sv_src[1] <= 1e-9 * sv_src[0]:
        raise Degenerate("correspondences are collinear")
    cov = b.T @ a
    U, _, Vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(U @ Vt))
    D = np.diag([1.0, 1.0, d if d != 0 else 1.0])
    R = U @ D @ Vt
    t = mu_d - R @ mu_s
    return R, t


def _correspond(tree: cKDTree, moved: np.ndarray, radius: float, trim: float):
    """Nearest neighbours within ``radius``, dropping the worst ``trim`` share."""
    dist, idx = tree.query(moved, distance_upper_bound=radius)
    keep = np.flatnonzero(np.isfinite(dist))
    if trim > 0 and len(keep):
        n_keep = len(keep) - int(np.floor(trim * len(keep)))
        order = np.argsort(dist[keep], kind="stable")
        keep = np.sort(keep[order[:n_keep]])
    return keep, idx[keep], dist[keep]


def icp_align(source: PointCloud, target: PointCloud, initial: Optional[PoseSE3] = None,
              config: Optional[IcpConfig] = None) -> IcpResult:
    """Register ``source`` onto ``target`` starting from ``initial``.

    Each iteration matches every transformed source point to its nearest
    target point within the correspondence radius, trims the worst matches
    and refits the rigid transform in closed form. A step is accepted only
    if it does not raise the inlier RMS; iteration stops once the RMS change
    drops below ``convergence_tol``.
    """
    config = config or IcpConfig()
    initial = initial or PoseSE3.identity()
    src = source.points
    dst = target.points
    if len(src) < 3 or len(dst) < 3:
        raise InsufficientOverlap("each cloud needs at least 3 points")
    tree = cKDTree(dst)
    radius, trim = config.correspondence_radius, config.trim_fraction

    def evaluate(R, t):
        keep, nn, dist = _correspond(tree, src @ R.T + t, radius, trim)
        if len(keep) < 3:
            raise InsufficientOverlap(f"only {len(keep)} correspondences within {radius} m")
        return keep, nn, float(np.sqrt(np.mean(dist**2)))

    R, t = initial.R, initial.t
    keep, nn, rms = evaluate(R, t)
    history = [rms]
    converged = False
    iterations = 0
    while iterations < config.max_iterations:
        iterations += 1
        R_new, t_new = rigid_fit(src[keep], dst[nn])
        keep_new, nn_new, rms_new = evaluate(R_new, t_new)
        if rms_new > rms:
            # the refit moved onto worse correspondences; keep the previous estimate
            converged = True
            break
        change = rms - rms_new
        R, t, keep, nn, rms = R_new, t_new, keep_new, nn_new, rms_new
        history.append(rms)
        if change < config.convergence_tol:
            converged = True
            break
    return IcpResult(PoseSE3.from_matrix(R, t), rms, iterations, converged, len(keep), history)


def seed_center_cloud(left, right, pairs, cam: StereoCamera, d_min: float = DEFAULT_MIN_DISPARITY):
    """Triangulate one camera-frame point per stereo-matched seed.

    ``left`` and ``right`` are keypoint lists, ``pairs`` an iterable of
    ``(left_index, right_index)``. Returns ``(cloud, skipped)`` where
    ``skipped`` counts pairs dropped for non-positive disparity.
    """
    pairs = [(int(i), int(j)) for i, j in pairs]
    if not pairs:
        return PointCloud.empty(), 0
    uv_l = np.array([(left[i].u, left[i].v) for i, _ in pairs])
    uv_r = np.array([(right[j].u, right[j].v) for _, j in pairs])
    pts, valid = triangulate_many(uv_l, uv_r, cam, d_min)
    return PointCloud(pts[valid]), int(np.count_nonzero(~valid))


def disparity_at(keypoints, depth_cloud: PointCloud, cam: StereoCamera, window_px: float = DISPARITY_WINDOW):
    """Median dense-stereo disparity around each left keypoint.

    ``depth_cloud`` is the frame's dense cloud in left-camera coordinates.
    Keypoints with no cloud point within ``window_px`` get NaN.
    """
    uv = np.array([(k.u, k.v) for k in keypoints], dtype=float).reshape(-1, 2)
    out = np.full(len(uv), np.nan)
    pts = depth_cloud.points[depth_cloud.points[:, 2] > 0]
    if len(uv) == 0 or len(pts) == 0:
        return out
    proj = np.column_stack([cam.fx * pts[:, 0] / pts[:, 2] + cam.cx, cam.fy * pts[:, 1] / pts[:, 2] + cam.cy])
    disp = cam.fx * cam.baseline / pts[:, 2]
    for n, near in enumerate(cKDTree(proj).query_ball_point(uv, window_px)):
        if near:
            out[n] = np.median(disp[near])
    return out


def seed_centers_from_depth(keypoints, depth_cloud: PointCloud, cam: StereoCamera,
                            window_px: float = DISPARITY_WINDOW, d_min: float = DEFAULT_MIN_DISPARITY):
    """Lift left-image seed keypoints to 3D with the dense disparity at each keypoint.

    Returns ``(cloud, skipped)``; keypoints without a disparity above ``d_min``
    are skipped and counted.
    """
    disp = disparity_at(keypoints, depth_cloud, cam, window_px)
    uv = np.array([(k.u, k.v) for k in keypoints], dtype=float).reshape(-1, 2)
    has = np.isfinite(disp)
    right = uv[has] - np.column_stack([disp[has], np.zeros(has.sum())])
    pts, valid = triangulate_many(uv[has], right, cam, d_min)
    return PointCloud(pts[valid]), int(len(uv) - np.count_nonzero(valid))


def seed_center_clouds(frames, cam: StereoCamera, d_min: float = DEFAULT_MIN_DISPARITY):
    """Apply :func:`seed_center_cloud` to ``(left, right, pairs)`` per frame."""
    clouds, skipped = [], 0
    for left, right, pairs in frames:
        cloud, n = seed_center_cloud(left, right, pairs, cam, d_min)
        clouds.append(cloud)
        skipped += n
    return clouds, skipped


def fuse(frames, voxel: Optional[float] = DEFAULT_VOXEL) -> PointCloud:
    """Transform ``(cloud, world_from_camera)`` pairs to world and voxel-downsample.

    ``voxel=None`` returns the plain world-frame concatenation.
    """
    world = concatenate([transform_cloud(cloud, pose) for cloud, pose in frames])
    return world if voxel is None else voxel_downsample(world, voxel)


def blur_metric(fused: PointCloud, gt_seed_centers, seed_radius: float, radius: Optional[float] = None) -> dict:
    """Sharpness of a fused model against known seed centers.

    Points within ``radius`` of a seed center are assigned to their nearest
    seed; the default radius is half the median spacing between seeds.
    ``seed_rms`` is the RMS distance of assigned points to the seed sphere
    surface and ``spread`` the mean over seeds of the RMS distance of the
    assigned points to their own centroid.
    """
    if gt_seed_centers is None:
        raise NoGroundTruth("seed centers are only known for simulated scenes")
    centers = np.asarray(gt_seed_centers, dtype=float).reshape(-1, 3)
    if len(centers) == 0:
        raise NoGroundTruth("no ground-truth seed centers")
    if len(fused) == 0:
        raise ValueError("fused cloud is empty")
    tree = cKDTree(centers)
    if radius is None:
        if len(centers) > 1:
            radius = 0.5 * float(np.median(tree.query(centers, k=2)[0][:, 1]))
        else:
            radius = 4.0 * seed_radius
    dist, owner = tree.query(fused.points, distance_upper_bound=radius)
    near = np.isfinite(dist)
    if not near.any():
        raise ValueError("no fused points lie near a seed")
    seed_rms = float(np.sqrt(np.mean((dist[near] - seed_radius) ** 2)))
    pts, own = fused.points[near], owner[near]
    order = np.argsort(own, kind="stable")
    pts, own = pts[order], own[order]
    _, start, counts = np.unique(own, return_index=True, return_counts=True)
    spreads = [np.sqrt(np.mean(np.sum((g - g.mean(axis=0)) ** 2, axis=1)))
               for g in np.split(pts, start[1:]) if len(g) >= 2]
    spread = float(np.mean(spreads)) if spreads else 0.0
    return {"seed_rms": seed_rms, "spread": spread}


@dataclass
class Registration:
    frame: int
    mode: str
    iterations: int
    rms: float
    converged: bool
    transform: PoseSE3
    fallback: bool = False  # True when ICP failed and the FK relative pose was kept

    def to_dict(self) -> dict:
        T = self.transform
        return {
            "frame": self.frame,
            "mode": self.mode,
            "iterations": self.iterations,
            "rms": self.rms,
            "converged": self.converged,
            "fallback": self.fallback,
            "transform": {"translation": list(map(float, T.translation)),
                          "rotation": list(map(float, T.rotation))},
        }


def chain_register(clouds, fk_poses, config: IcpConfig, origin: Optional[PoseSE3] = None):
    """Refine FK poses by registering each frame to the previous refined frame.

    ``clouds`` are the per-frame registration clouds in camera coordinates.
    The FK relative pose seeds each alignment; when ICP fails for a pair the
    FK relative pose is kept. Returns ``(poses, registrations)``.
    """
    if len(clouds) != len(fk_poses):
        raise ValueError("need one cloud per pose")
    poses = [origin or fk_poses[0]]
    report = []
    for k in range(1, len(clouds)):
        initial = se3_compose(se3_inverse(fk_poses[k - 1]), fk_poses[k])
        try:
            res = icp_align(clouds[k], clouds[k - 1], initial, config)
            rel, reg = res.transform, Registration(k, config.mode, res.iterations, res.rms_error,
                                                   res.converged, res.transform)
        except (InsufficientOverlap, Degenerate) as exc:
            log.warning("frame %d: ICP failed (%s); keeping FK prior", k, exc)
            rel, reg = initial, Registration(k, config.mode, 0, float("nan"), False, initial, True)
        poses.append(se3_compose(poses[-1], rel))
        report.append(reg)
    return poses, report


def registration_report(registrations) -> str:
    return json.dumps([r.to_dict() for r in registrations], indent=2, sort_keys=True)
