"""Incremental stereo SLAM over associated seed keypoints.

Each frame brings left/right keypoints, the stereo association between
them and the temporal association to the previous left image. Temporal
matches are verified geometrically before they reach the factor graph:
hypotheses keep the predicted rotation and take the translation from single
stereo-triangulated matches, and the hypothesis that reprojects the most
landmarks wins. The surviving matches then drive a pose-only refinement and
a sliding-window optimisation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from fieldmap.backend.factors import OdometryFactor, PriorFactor, StereoFactor
from fieldmap.backend.graph import FactorGraph, optimize
from fieldmap.config import BackendConfig
from fieldmap.core.camera import DEFAULT_MIN_DISPARITY, triangulate_many
from fieldmap.core.se3 import PoseSE3
from fieldmap.core.types import StereoCamera
from fieldmap.errors import BackendFailure, TrackLost

TRACKING = "tracking"
LOST = "lost"
BACKEND_FAILURE = "backend_failure"

PRIOR_SIGMA = 1e-3  # metres and radians on the first pose


@dataclass
class TrackState:
    status: str = TRACKING
    last_good_frame: int = 0
    distance_mapped: float = 0.0
    frames_tracked: int = 0
    failure_mode: Optional[str] = None


def distance_mapped(trajectory, last_good: int, range_length: float = np.inf):
    """Arc length of ``trajectory`` up to index ``last_good``, capped at ``range_length``.

    ``trajectory`` is a sequence of PoseSE3 or (N, 3) positions. Returns
    ``(distance, fraction)``; the fraction is NaN for an infinite range.
    """
    pos = np.array([p.t if isinstance(p, PoseSE3) else p for p in trajectory], dtype=float).reshape(-1, 3)
    if len(pos) == 0:
        raise ValueError("trajectory is empty")
    last = int(np.clip(last_good, 0, len(pos) - 1))
    steps = np.linalg.norm(np.diff(pos[: last + 1], axis=0), axis=1)
    dist = float(min(steps.sum(), range_length))
    frac = dist / range_length if np.isfinite(range_length) else float("nan")
    return dist, frac


def _pairs(matches) -> list[tuple[int, int]]:
    if matches is None:
        return []
    if hasattr(matches, "pairs"):
        return matches.pairs()
    return [(int(i), int(j)) for i, j in matches]


@dataclass
class SlamSystem:
    camera: StereoCamera
    config: BackendConfig = field(default_factory=BackendConfig)
    range_length: float = np.inf
    initial_pose: PoseSE3 = field(default_factory=PoseSE3.identity)
    initial_motion: PoseSE3 = field(default_factory=PoseSE3.identity)
    min_disparity: float = DEFAULT_MIN_DISPARITY
    batch: bool = False  # optimise every pose each frame instead of a sliding window

    def __post_init__(self):
        self.graph = FactorGraph(self.camera)
        self.state = TrackState()
        self.frame_ids: list[int] = []
        self.inlier_counts: dict[int, int] = {}
        self._prev_map: dict[int, int] = {}  # previous left keypoint index -> landmark id
        self._next_landmark = 0
        self._misses = 0

    # -- helpers ---------------------------------------------------------

    @property
    def trajectory(self) -> list:
        return [self.graph.poses[f] for f in self.frame_ids]

    def _motion_prior(self) -> PoseSE3:
        """Translation-only constant-velocity step; rotation rates are not extrapolated."""
        if len(self.frame_ids) >= 2:
            before = self.graph.poses[self.frame_ids[-2]]
            last = self.graph.poses[self.frame_ids[-1]]
            return PoseSE3(translation=before.inverse().compose(last).t)
        return self.initial_motion

    def _predict(self) -> PoseSE3:
        return self.graph.poses[self.frame_ids[-1]].compose(self._motion_prior())

    def _new_landmark(self, position) -> int:
        lid = self._next_landmark
        self._next_landmark += 1
        self.graph.add_landmark(lid, position)
        return lid

    def _stereo_points(self, left, right, stereo_pairs):
        """Camera-frame triangulation of each stereo-matched left keypoint."""
        out = {}
        if not stereo_pairs:
            return out
        li = np.array([i for i, _ in stereo_pairs])
        ri = np.array([j for _, j in stereo_pairs])
        pts, valid = triangulate_many(left[li], right[ri], self.camera, self.min_disparity)
        for i, j, p, ok in zip(li, ri, pts, valid):
            if ok:
                out[int(i)] = (int(j), p)
        return out

    def _reprojection(self, R, t, X):
        """Left and right pixel predictions for world points under pose (R, t)."""
        p = (X - t) @ R
        z = p[..., 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uL = self.camera.fx * p[..., 0] / z + self.camera.cx
            v = self.camera.fy * p[..., 1] / z + self.camera.cy
            uR = uL - self.camera.fx * self.camera.baseline / z
        return uL, v, uR, z

    def _inliers(self, R, t, X, obs_left, obs_right=None):
        """Candidates reprojecting within ``inlier_px``; with ``obs_right`` the right image must agree too.

        ``obs_right`` holds the current right-image u per candidate, NaN where
        the keypoint has no stereo partner (such candidates never qualify).
        """
        uL, v, uR, z = self._reprojection(R, t, X)
        ok = (z > 0) & (np.hypot(uL - obs_left[..., 0], v - obs_left[..., 1]) < self.config.inlier_px)
        if obs_right is not None:
            with np.errstate(invalid="ignore"):
                ok &= np.abs(uR - obs_right) < self.config.inlier_px
        return ok

    def _ransac(self, frame_id, pred: PoseSE3, X, obs, obs_right):
        """Best translation hypothesis under the predicted rotation.

        Hypotheses come from single candidates with a current stereo point and
        are scored on left-image reprojection. Returns ``(mask, t)``.
        """
        R = pred.R
        seeds = np.flatnonzero(np.isfinite(obs_right))
        if len(seeds) > self.config.ransac_iters:
            rng = np.random.default_rng([frame_id, len(X)])
            seeds = np.sort(rng.choice(seeds, self.config.ransac_iters, replace=False))
        p_c = self._backproject(obs[seeds], obs_right[seeds])
        T = np.vstack([pred.t[None], X[seeds] - p_c @ R.T])  # (H, 3)
        inl = self._inliers(R[None], T[:, None, :], X[None], obs[None])
        best = int(np.argmax(inl.sum(axis=1)))  # first maximum, so deterministic
        return inl[best], T[best]

    def _agreeing_right(self, R, t, X, obs_right):
        """Right-image u where it agrees with the pose, NaN otherwise."""
        _, _, uR, _ = self._reprojection(R, t, X)
        with np.errstate(invalid="ignore"):
            return np.where(np.abs(uR - obs_right) < self.config.inlier_px, obs_right, np.nan)

    def _backproject(self, left, u_right):
        pts, _ = triangulate_many(left, np.column_stack([u_right, left[:, 1]]), self.camera, -np.inf)
        return pts

    def _refine(self, frame_id, R, t, cand_lids, obs, rights):
        """Pose-only robust refinement against fixed landmarks."""
        tmp = FactorGraph(self.camera)
        tmp.add_pose(frame_id, PoseSE3.from_matrix(R, t))
        for lid, o, r in zip(cand_lids, obs, rights):
            if lid not in tmp.landmarks:
                tmp.add_landmark(lid, self.graph.landmarks[lid])
            tmp.add_factor(StereoFactor(frame_id, lid, (o[0], o[1]), r, bool(np.isfinite(r)),
                                        self.config.sigma_px))
        optimize(tmp, max_iters=self.config.max_iters, lambda_init=self.config.lambda_init,
                 tol=self.config.tol, huber_k=self.config.huber_k, free_poses=[frame_id],
                 free_landmarks=[])
        return tmp.poses[frame_id]

    # -- main entry ------------------------------------------------------

    def add_frame(self, frame_id: int, left, right, stereo_matches, temporal_matches=None) -> TrackState:
        """Insert one stereo frame.

        ``stereo_matches`` pairs left indices with right indices;
        ``temporal_matches`` pairs the previous frame's left indices with this
        frame's left indices (ignored on the first frame). Both may be
        Assignments or iterables of index pairs.

        Raises TrackLost or BackendFailure; the state is updated first.
        """
        if self.state.status != TRACKING:
            raise TrackLost(f"tracking already stopped ({self.state.status})", self.state)
        left = np.asarray(left, dtype=float).reshape(-1, 2)
        right = np.asarray(right, dtype=float).reshape(-1, 2)
        stereo_pts = self._stereo_points(left, right, _pairs(stereo_matches))
        cfg = self.config
        rot_sigma = np.deg2rad(cfg.sigma_odo_rotation_deg)

        linked: dict[int, int] = {}  # current left index -> landmark id
        right_of: dict[int, float] = {}
        if not self.frame_ids:
            pose = self.initial_pose
            self.graph.add_pose(frame_id, pose)
            self.graph.add_factor(PriorFactor(frame_id, pose, PRIOR_SIGMA, PRIOR_SIGMA))
            good = True
            n_inliers = 0
        else:
            prev_id = self.frame_ids[-1]
            pred = self._predict()
            motion = self._motion_prior()
            cand = [
                (self._prev_map[i], j) for i, j in _pairs(temporal_matches) if i in self._prev_map
            ]
            pose = pred
            n_inliers = 0
            if cand:
                X = np.array([self.graph.landmarks[l] for l, _ in cand])
                obs = left[[j for _, j in cand]]
                obs_right = np.array([right[stereo_pts[j][0], 0] if j in stereo_pts else np.nan
                                      for _, j in cand])
                mask, t_best = self._ransac(frame_id, pred, X, obs, obs_right)
                R = pred.R
                for _ in range(2):
                    if mask.sum() < 3:
                        break
                    sel = np.flatnonzero(mask)
                    rights = self._agreeing_right(R, t_best, X[sel], obs_right[sel])
                    refined = self._refine(frame_id, R, t_best, [cand[k][0] for k in sel], obs[sel], rights)
                    R, t_best = refined.R, refined.t
                    mask = self._inliers(R, t_best, X, obs)
                n_inliers = int(mask.sum())
                if n_inliers >= cfg.k_min:
                    pose = PoseSE3.from_matrix(R, t_best)
                    rights = self._agreeing_right(R, t_best, X, obs_right)
                    for k in np.flatnonzero(mask):
                        lid, j = cand[k]
                        if j in linked or lid in linked.values():
                            continue
                        linked[j] = lid
                        right_of[j] = rights[k]
            good = n_inliers >= cfg.k_min
            self.graph.add_pose(frame_id, pose)
            self.graph.add_factor(OdometryFactor(prev_id, frame_id, motion, cfg.sigma_odo_translation, rot_sigma))
        self.inlier_counts[frame_id] = n_inliers
        self.frame_ids.append(frame_id)

        for j, lid in linked.items():
            r = right_of[j]
            self.graph.add_factor(StereoFactor(frame_id, lid, (left[j, 0], left[j, 1]), r,
                                               bool(np.isfinite(r)), cfg.sigma_px))
        # landmarks are only ever created from stereo
        pose_now = self.graph.poses[frame_id]
        for i in sorted(stereo_pts):
            if i in linked:
                continue
            j, p_c = stereo_pts[i]
            lid = self._new_landmark(pose_now.apply(p_c))
            self.graph.add_factor(StereoFactor(frame_id, lid, (left[i, 0], left[i, 1]), right[j, 0],
                                               True, cfg.sigma_px))
            linked[i] = lid
        self._prev_map = linked

        if good:
            self._misses = 0
            self.state.last_good_frame = frame_id
            self.state.frames_tracked += 1
        else:
            self._misses += 1

        if len(self.frame_ids) > 1:
            free = None if self.batch else self.frame_ids[-cfg.window:]
            try:
                optimize(self.graph, max_iters=cfg.max_iters, lambda_init=cfg.lambda_init, tol=cfg.tol,
                         huber_k=cfg.huber_k if cfg.huber else None, free_poses=free)
            except BackendFailure as exc:
                self._update_distance()
                self.state.status = BACKEND_FAILURE
                self.state.failure_mode = BACKEND_FAILURE
                raise BackendFailure(str(exc)) from exc
        self._update_distance()

        if self._misses >= cfg.lost_window:
            self.state.status = LOST
            self.state.failure_mode = LOST
            raise TrackLost(f"fewer than {cfg.k_min} verified matches for {self._misses} frames", self.state)
        return self.state

    def _update_distance(self) -> None:
        idx = self.frame_ids.index(self.state.last_good_frame)
        dist, _ = distance_mapped(self.trajectory, idx, self.range_length)
        self.state.distance_mapped = dist
