"""Deterministic synthetic scenes with full ground truth.

Two scenarios: a stereo rig driving along a sorghum range, and an arm-held
stereo camera orbiting a single panicle. All randomness flows from
``config.rng_seed`` through per-purpose seed sequences, so any one frame can
be regenerated without replaying the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fieldmap.config import ORBIT, RANGE, SceneConfig
from fieldmap.core.camera import project_many
from fieldmap.core.se3 import PoseSE3, se3_compose
from fieldmap.core.types import LEFT, RIGHT, SIDES, PointCloud, StereoCamera
from fieldmap.errors import ConfigError
from fieldmap.simulator.geometry import Panicle, make_panicle, ring_lattice, visible_from

MIN_DEPTH = 0.05

# Stream ids for np.random.SeedSequence; keep stable, output depends on them.
_PANICLES, _DETECT, _WIND, _FK, _SURFACE, _CLOUD = range(6)

SEED_COLOR = (170, 95, 40)
CLUTTER_COLOR = (95, 115, 55)


@dataclass
class FrameDetections:
    keypoints: np.ndarray  # (K, 2) pixels
    bboxes: np.ndarray  # (K, 4) x_min, y_min, x_max, y_max
    seed_ids: np.ndarray  # (K,) ground-truth seed id, -1 for false positives


@dataclass
class Scene:
    config: SceneConfig
    camera: StereoCamera
    panicles: list
    seeds: np.ndarray  # (N, 3) world
    seed_panicle: np.ndarray  # (N,)
    poses: list  # ground-truth world-from-camera (left camera) poses
    detections: list  # per frame: {side: FrameDetections}
    fk_poses: Optional[list] = None
    clouds: Optional[list] = None  # per frame, left-camera frame
    surface: Optional[PointCloud] = None  # fixed world surface samples (orbit)
    surface_is_seed: Optional[np.ndarray] = None
    visible: list = field(default_factory=list)  # per frame: {side: bool mask over seeds}

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def frame_count(self) -> int:
        return len(self.poses)

    @property
    def seed_normals(self) -> np.ndarray:
        normals = np.zeros_like(self.seeds)
        for pan in self.panicles:
            m = self.seed_panicle == pan.id
            normals[m] = pan.normals(self.seeds[m])
        return normals

    def correspondences(self, frame: int, side: str) -> np.ndarray:
        return self.detections[frame][side].seed_ids


def _rng(config: SceneConfig, *stream) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([config.rng_seed, *stream]))


def _seed_lattice(config: SceneConfig, panicles):
    lat = config.lattice
    rng = _rng(config, _PANICLES, 1)
    seeds, owner = [], []
    for pan in panicles:
        theta, phi, _ = ring_lattice(pan.semi_axes, lat.seeds_per_panicle, lat.jitter, rng,
                                     phase=rng.uniform(0, 2 * np.pi))
        seeds.append(pan.shell_points(theta, phi))
        owner.append(np.full(theta.size, pan.id))
    return np.vstack(seeds), np.concatenate(owner)


def _range_panicles(config: SceneConfig):
    rng = _rng(config, _PANICLES, 0)
    base = np.asarray(config.lattice.semi_axes, dtype=float)
    spacing = config.panicle_spacing
    panicles = []
    for i in range(config.panicle_count):
        center = np.array([
            (i - 1) * spacing + rng.uniform(-0.15, 0.15) * spacing,
            rng.normal(0.0, 0.02),
            config.trajectory.standoff + rng.normal(0.0, 0.02),
        ])
        scale = 1.0 + config.lattice.size_variation * rng.uniform(-1.0, 1.0)
        panicles.append(make_panicle(i, center, base * scale, rng))
    return panicles


def _range_poses(config: SceneConfig):
    traj = config.trajectory
    poses = []
    for k in range(config.frame_count):
        y = traj.bounce_amplitude * np.sin(2 * np.pi * k / traj.bounce_period)
        poses.append(PoseSE3((1.0, 0.0, 0.0, 0.0), (traj.speed * k, y, 0.0)))
    return poses


def _orbit_poses(config: SceneConfig, center):
    orbit = config.orbit
    poses = []
    for k in range(config.frame_count):
        alpha = np.deg2rad(k * orbit.step_degrees)
        z_axis = np.array([-np.sin(alpha), 0.0, np.cos(alpha)])
        y_axis = np.array([0.0, 1.0, 0.0])
        x_axis = np.cross(y_axis, z_axis)
        R = np.column_stack([x_axis, y_axis, z_axis])
        poses.append(PoseSE3.from_matrix(R, center - orbit.radius * z_axis))
    return poses


def _camera_centers(pose: PoseSE3, cam: StereoCamera):
    R, t = pose.R, pose.t
    return {LEFT: t, RIGHT: t + R[:, 0] * cam.baseline}


def _wind_offsets(config: SceneConfig, frame: int, n_panicles: int) -> np.ndarray:
    sigma = config.noise.wind_sigma
    if sigma <= 0:
        return np.zeros((n_panicles, 3))
    return _rng(config, _WIND, frame).normal(0.0, sigma, size=(n_panicles, 3))


def _detect_frame(config, cam, pose, frame, seeds, owner, normals, panicles):
    """Noisy, incomplete, contaminated keypoints for both images of one frame."""
    noise = config.noise
    wind = _wind_offsets(config, frame, len(panicles))
    moved = seeds + wind[owner]
    centers = _camera_centers(pose, cam)
    p_cam = (moved - pose.t) @ pose.R
    out, vis_out = {}, {}
    for s_idx, side in enumerate(SIDES):
        rng = _rng(config, _DETECT, frame, s_idx)
        uv = np.full((len(seeds), 2), np.nan)
        front = p_cam[:, 2] > MIN_DEPTH
        uv[front] = project_many(p_cam[front], cam, side)
        in_img = front & cam.in_image(uv[:, 0], uv[:, 1])
        vis = in_img.copy()
        idx = np.nonzero(in_img)[0]
        if idx.size:
            vis[idx] = visible_from(centers[side], moved[idx], normals[idx], owner[idx], panicles)
        vis_out[side] = vis

        ids = np.nonzero(vis)[0]
        keep = rng.random(ids.size) >= noise.dropout
        ids = ids[keep]
        kp = uv[ids] + rng.normal(0.0, noise.pixel_sigma, size=(ids.size, 2)) if noise.pixel_sigma > 0 else uv[ids]
        inside = cam.in_image(kp[:, 0], kp[:, 1])
        ids, kp = ids[inside], kp[inside]
        half = np.maximum(1.0, cam.fx * config.lattice.seed_radius / p_cam[ids, 2] * 1.3)
        bb = np.column_stack([kp[:, 0] - half, kp[:, 1] - half, kp[:, 0] + half, kp[:, 1] + half])

        n_fp = rng.poisson(noise.false_positive_rate * ids.size) if noise.false_positive_rate > 0 else 0
        fp = np.column_stack([rng.uniform(0, cam.width, n_fp), rng.uniform(0, cam.height, n_fp)])
        fp_bb = np.column_stack([fp - 2.0, fp + 2.0])

        kp_all = np.vstack([kp, fp])
        bb_all = np.vstack([bb, fp_bb])
        sid_all = np.concatenate([ids, np.full(n_fp, -1)]).astype(np.int64)
        order = rng.permutation(len(kp_all))
        out[side] = FrameDetections(kp_all[order], bb_all[order], sid_all[order])
    return out, vis_out


def generate_range_scene(config: SceneConfig) -> Scene:
    """Stereo rig moving in a straight line past a row of panicles."""
    config.validate()
    if config.kind != RANGE:
        raise ConfigError("generate_range_scene needs scene.kind = 'range'", "scene.kind")
    cam = config.camera.stereo_camera()
    panicles = _range_panicles(config)
    seeds, owner = _seed_lattice(config, panicles)
    scene = Scene(config, cam, panicles, seeds, owner, _range_poses(config), [])
    normals = scene.seed_normals
    for k, pose in enumerate(scene.poses):
        det, vis = _detect_frame(config, cam, pose, k, seeds, owner, normals, panicles)
        scene.detections.append(det)
        scene.visible.append(vis)
    return scene


def _perturb(pose: PoseSE3, rng, sigma_t, sigma_r) -> PoseSE3:
    delta = PoseSE3.from_rotvec(rng.normal(0.0, sigma_r, 3), rng.normal(0.0, sigma_t, 3))
    return PoseSE3(se3_compose(pose, delta).rotation, tuple(pose.t + np.asarray(delta.translation)))


def _seed_surface(config: SceneConfig, seeds: np.ndarray):
    """Fixed world samples on a small sphere around every seed."""
    rng = _rng(config, _SURFACE)
    k = config.orbit.points_per_seed
    dirs = rng.normal(size=(len(seeds) * k, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pts = np.repeat(seeds, k, axis=0) + config.lattice.seed_radius * dirs
    return pts, dirs, np.repeat(np.arange(len(seeds)), k)


def _clutter(config: SceneConfig, panicle: Panicle, n: int, rng):
    """Inter-seed points inside the seed layer at a scattered depth.

    Stereo sees different gaps between seeds from every viewpoint, so these
    points are drawn afresh per frame rather than fixed in the world.
    """
    theta = np.arccos(rng.uniform(-1.0, 1.0, n))
    phi = rng.uniform(0.0, 2 * np.pi, n)
    shell = panicle.shell_points(theta, phi)
    normals = panicle.normals(shell)
    spread = config.orbit.clutter_scatter
    scale = 0.92 + spread * rng.uniform(-1.0, 1.0, n)
    center = np.asarray(panicle.center, dtype=float)
    return center + scale[:, None] * (shell - center), normals


def _frame_cloud(config, cam, pose, frame, panicle, seed_pts, seed_normals, owner_seed, seed_visible):
    """Dense stereo cloud of one frame in left-camera coordinates."""
    noise = config.noise
    rng = _rng(config, _CLOUD, frame)
    n_clutter = int(round(config.orbit.clutter_density * len(seed_pts)))
    clutter, clutter_normals = _clutter(config, panicle, n_clutter, rng)
    surface = np.vstack([seed_pts, clutter])
    normals = np.vstack([seed_normals, clutter_normals])
    is_seed = np.concatenate([np.ones(len(seed_pts), bool), np.zeros(n_clutter, bool)])
    p_cam = (surface - pose.t) @ pose.R
    facing = np.einsum("ij,ij->i", pose.t - surface, normals) > 0
    front = p_cam[:, 2] > MIN_DEPTH
    uv = np.full((len(surface), 2), np.nan)
    uv[front] = project_many(p_cam[front], cam)
    in_img = front & cam.in_image(uv[:, 0], uv[:, 1])
    seed_ok = np.ones(len(surface), bool)
    seed_ok[is_seed] = seed_visible[owner_seed]
    keep = facing & in_img & seed_ok
    pts = p_cam[keep]
    seedish = is_seed[keep]
    colors = np.where(seedish[:, None], SEED_COLOR, CLUTTER_COLOR).astype(float)
    if len(pts):
        z = pts[:, 2]
        px = np.where(seedish, noise.depth_pixel_sigma, config.orbit.clutter_pixel_sigma)
        sigma = z * z * np.sqrt(2.0) * px / (cam.fx * cam.baseline)
        scale = 1.0 + rng.normal(0.0, 1.0, len(z)) * sigma / z
        pts = pts * scale[:, None]
    n_out = rng.binomial(len(pts), config.orbit.outlier_fraction) if len(pts) else 0
    if n_out:
        pick = rng.choice(len(pts), n_out, replace=False)
        pts[pick] *= (1.0 + rng.uniform(-0.1, 0.1, n_out))[:, None]
    colors = np.clip(colors + rng.normal(0.0, 8.0, colors.shape), 0, 255)
    return PointCloud(pts, colors), surface[keep & ~is_seed]


def generate_orbit_scene(config: SceneConfig) -> Scene:
    """Arm-held stereo camera on a horizontal arc around one panicle.

    FK poses are the true poses with independent per-frame noise; each frame
    carries a dense cloud (seed surfaces plus inter-seed clutter) and seed
    keypoint detections.
    """
    config.validate()
    if config.kind != ORBIT:
        raise ConfigError("generate_orbit_scene needs scene.kind = 'orbit'", "scene.kind")
    cam = config.camera.stereo_camera()
    rng = _rng(config, _PANICLES, 0)
    scale = 1.0 + config.lattice.size_variation * rng.uniform(-1.0, 1.0)
    panicle = make_panicle(0, np.zeros(3), np.asarray(config.lattice.semi_axes, dtype=float) * scale, rng)
    panicles = [panicle]
    seeds, owner = _seed_lattice(config, panicles)
    poses = _orbit_poses(config, panicle.center)
    scene = Scene(config, cam, panicles, seeds, owner, poses, [])
    normals = scene.seed_normals

    fk_rng = _rng(config, _FK)
    sigma_r = np.deg2rad(config.noise.fk_rotation_sigma_deg)
    scene.fk_poses = [_perturb(p, fk_rng, config.noise.fk_translation_sigma, sigma_r) for p in poses]

    seed_pts, seed_dirs, owner_seed = _seed_surface(config, seeds)
    scene.clouds = []
    clutter = []
    for k, pose in enumerate(poses):
        det, vis = _detect_frame(config, cam, pose, k, seeds, owner, normals, panicles)
        scene.detections.append(det)
        scene.visible.append(vis)
        cloud, seen_clutter = _frame_cloud(config, cam, pose, k, panicle, seed_pts, seed_dirs, owner_seed, vis[LEFT])
        scene.clouds.append(cloud)
        clutter.append(seen_clutter)
    clutter = np.vstack(clutter)
    scene.surface = PointCloud(np.vstack([seed_pts, clutter]))
    scene.surface_is_seed = np.concatenate([np.ones(len(seed_pts), bool), np.zeros(len(clutter), bool)])
    return scene


def generate_scene(config: SceneConfig) -> Scene:
    if config.kind == ORBIT:
        return generate_orbit_scene(config)
    return generate_range_scene(config)
