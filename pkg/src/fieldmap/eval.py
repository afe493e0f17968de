"""Evaluation metrics: distance mapped, matching accuracy, trajectory error
and the paired full-cloud versus seed-center ICP comparison."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Optional, Union

import numpy as np

from fieldmap.config import RunConfig
from fieldmap.core.se3 import PoseSE3, pose_error
from fieldmap.errors import EmptyInput, FrameMismatch, MissingGroundTruth
from fieldmap.icp import FULL_CLOUD, SEED_CENTERS, blur_metric, fuse
from fieldmap.pipeline import run_reconstruction
from fieldmap.simulator import generate_orbit_scene

FAILED = "Failed"


@dataclass(frozen=True)
class RangeResult:
    range_id: str
    range_length: float
    mapped: Union[float, str]  # metres, or FAILED

    def __post_init__(self):
        if not self.range_length > 0:
            raise ValueError("range_length must be positive")
        if self.mapped != FAILED:
            m = float(self.mapped)
            if m < 0 or m > self.range_length + 1e-9:
                raise ValueError(f"mapped distance {m} outside [0, {self.range_length}]")

    @property
    def failed(self) -> bool:
        return self.mapped == FAILED

    @property
    def fraction(self) -> float:
        return 0.0 if self.failed else float(self.mapped) / self.range_length


def aggregate_distance_mapped(results) -> float:
    """Mean mapped fraction over ranges; a failed range counts as 0 m."""
    results = list(results)
    if not results:
        raise EmptyInput("no range results to aggregate")
    return float(np.mean([r.fraction for r in results]))


def load_published_tables() -> dict:
    """Published per-range results bundled with the package."""
    text = resources.files("fieldmap").joinpath("data/published_tables.json").read_text()
    return json.loads(text)


def table_results(method: str, table: Union[str, dict] = "distance_mapped") -> list:
    """RangeResult rows of one method column of a published table.

    ``table`` is a key of the bundled data file or an already loaded table.
    """
    if isinstance(table, str):
        table = load_published_tables()[table]
    if method not in table["methods"]:
        raise KeyError(f"unknown method {method!r}; have {sorted(table['methods'])}")
    out = []
    for row in table["ranges"]:
        value = row["mapped"][method]
        out.append(RangeResult(str(row["range"]), float(row["length"]), FAILED if value is None else float(value)))
    return out


@dataclass
class MatchReport:
    tp: int
    fp: int
    fn: int
    precision: Optional[float]  # None when nothing was predicted
    recall: Optional[float]  # None when there is nothing to find
    f1: Optional[float]

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn,
                "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _pairs(predicted):
    if hasattr(predicted, "matches"):
        return [(int(m[0]), int(m[1])) for m in predicted.matches]
    return [(int(i), int(j)) for i, j in predicted]


def match_accuracy(predicted, gt_correspondences) -> MatchReport:
    """Score an assignment against ground-truth seed ids.

    ``gt_correspondences`` is ``(ids_u, ids_v)``, the seed id behind every
    node on each side with -1 for false detections. A predicted pair is a
    true positive when both ids agree and are not -1; every ground-truth
    seed present on both sides and not recovered is a false negative.
    """
    if gt_correspondences is None:
        raise MissingGroundTruth("no ground-truth correspondences")
    ids_u, ids_v = (np.asarray(x, dtype=int) for x in gt_correspondences)
    pairs = _pairs(predicted)
    for i, j in pairs:
        if not (0 <= i < len(ids_u) and 0 <= j < len(ids_v)):
            raise MissingGroundTruth(f"pair ({i}, {j}) is not covered by the ground truth")
    tp = sum(1 for i, j in pairs if ids_u[i] >= 0 and ids_u[i] == ids_v[j])
    fp = len(pairs) - tp
    n_true = len(set(ids_u[ids_u >= 0].tolist()) & set(ids_v[ids_v >= 0].tolist()))
    fn = n_true - tp
    precision = tp / (tp + fp) if pairs else None
    recall = tp / n_true if n_true else None
    if precision is None or recall is None:
        f1 = None
    elif precision + recall == 0:
        f1 = 0.0
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return MatchReport(tp, fp, fn, precision, recall, f1)


def umeyama_rigid(src: np.ndarray, dst: np.ndarray):
    """Rotation and translation minimising ``|dst - (R src + t)|`` (no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    U, _, Vt = np.linalg.svd((dst - mu_d).T @ (src - mu_s))
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt)) or 1.0
    R = U @ D @ Vt
    return R, mu_d - R @ mu_s


def _positions(traj, ids):
    if isinstance(traj, dict):
        return [int(k) for k in traj], np.array([np.asarray(p.t if isinstance(p, PoseSE3) else p, dtype=float)
                                                for p in traj.values()])
    pts = np.array([np.asarray(p.t if isinstance(p, PoseSE3) else p, dtype=float) for p in traj])
    return list(range(len(pts))) if ids is None else [int(i) for i in ids], pts


def trajectory_ate(estimated, ground_truth, frame_ids=None, gt_frame_ids=None) -> dict:
    """Absolute trajectory error after rigid alignment of the estimate.

    Trajectories are sequences of poses or positions, or dicts keyed by
    frame id. Frame ids of both sides must agree.
    """
    ids_e, est = _positions(estimated, frame_ids)
    ids_g, gt = _positions(ground_truth, gt_frame_ids)
    if ids_e != ids_g:
        raise FrameMismatch("estimated and ground-truth frame ids differ")
    if len(est) < 3:
        raise FrameMismatch("need at least 3 frames")
    R, t = umeyama_rigid(est, gt)
    err = np.linalg.norm(est @ R.T + t - gt, axis=1)
    return {"rmse": float(np.sqrt(np.mean(err**2))),
            "per_frame": {fid: float(e) for fid, e in zip(ids_e, err)}}


@dataclass
class ModeTrial:
    rng_seed: int
    pose_error: dict  # mode -> (translation m, rotation rad) of the final frame
    blur: dict  # mode -> blur_metric result
    fallbacks: dict  # mode -> frames kept at the FK prior

    @property
    def seed_centers_wins(self) -> bool:
        return self.pose_error[SEED_CENTERS][0] < self.pose_error[FULL_CLOUD][0]


@dataclass
class ModeComparison:
    trials: list = field(default_factory=list)

    @property
    def win_rate(self) -> float:
        return float(np.mean([t.seed_centers_wins for t in self.trials])) if self.trials else float("nan")

    def mean_spread(self, mode: str) -> float:
        return float(np.mean([t.blur[mode]["spread"] for t in self.trials]))

    def mean_pose_error(self, mode: str) -> float:
        return float(np.mean([t.pose_error[mode][0] for t in self.trials]))

    def to_dict(self) -> dict:
        modes = (FULL_CLOUD, SEED_CENTERS)
        return {
            "trials": [{"rng_seed": t.rng_seed, "pose_error": {m: list(t.pose_error[m]) for m in modes},
                        "blur": t.blur, "fallbacks": t.fallbacks, "seed_centers_wins": t.seed_centers_wins}
                       for t in self.trials],
            "win_rate": self.win_rate,
            "mean_spread": {m: self.mean_spread(m) for m in modes},
            "mean_pose_error": {m: self.mean_pose_error(m) for m in modes},
        }


def compare_icp_modes(scene_config, seeds, run_config=None) -> ModeComparison:
    """Paired trials: both ICP modes on the same generated orbit scene per seed."""
    out = ModeComparison()
    for rng_seed in seeds:
        cfg = replace(scene_config, rng_seed=int(rng_seed))
        scene = generate_orbit_scene(cfg)
        rc = replace(run_config, scene=cfg) if run_config is not None else RunConfig(scene=cfg)
        errors, blur, fallbacks = {}, {}, {}
        for mode in (FULL_CLOUD, SEED_CENTERS):
            run = run_reconstruction(scene, rc, mode)
            errors[mode] = pose_error(run.poses[-1], scene.poses[-1])
            world = fuse(list(zip(scene.clouds, run.poses)), voxel=None)
            blur[mode] = blur_metric(world, scene.seeds, cfg.lattice.seed_radius)
            fallbacks[mode] = sum(r.fallback for r in run.registrations)
        out.trials.append(ModeTrial(int(rng_seed), errors, blur, fallbacks))
    return out
