"""Scene directories on disk.

Layout::

    config.toml                 echoed scene config
    detections.jsonl            one record per frame and side
    clouds/frame_%04d.ply       dense stereo clouds (orbit scenes)
    gt/seeds.json               seed positions and panicle ids
    gt/trajectory.txt           ground-truth poses
    gt/correspondences.jsonl    keypoint -> seed id per frame and side
    fk/trajectory.txt           forward-kinematics poses (orbit scenes)

Trajectory lines are ``frame_id tx ty tz qx qy qz qw``. Floats are written
with enough digits to round-trip exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from fieldmap.config import dumps, load_toml, scene_config_from_dict
from fieldmap.core.cloud import read_ply, write_ply
from fieldmap.core.se3 import PoseSE3
from fieldmap.core.types import LEFT, RIGHT, SIDES
from fieldmap.simulator.scenes import FrameDetections, Scene

CLOUD_NAME = "frame_{:04d}.ply"


def _num(x) -> str:
    return repr(float(x))


def format_trajectory(poses, frame_ids=None) -> str:
    ids = range(len(poses)) if frame_ids is None else frame_ids
    lines = []
    for fid, pose in zip(ids, poses):
        w, x, y, z = pose.rotation
        vals = list(pose.translation) + [x, y, z, w]
        lines.append(" ".join([str(int(fid))] + [_num(v) for v in vals]))
    return "\n".join(lines) + "\n"


def write_trajectory(path, poses, frame_ids=None) -> None:
    Path(path).write_text(format_trajectory(poses, frame_ids))


def read_trajectory(path):
    """Return ``(frame_ids, poses)`` from a trajectory file."""
    ids, poses = [], []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 8:
            raise ValueError(f"{path}:{n}: expected 8 fields, got {len(parts)}")
        tx, ty, tz, qx, qy, qz, qw = map(float, parts[1:])
        ids.append(int(parts[0]))
        poses.append(PoseSE3((qw, qx, qy, qz), (tx, ty, tz)))
    return ids, poses


def _jsonl(path, records) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))


def _read_jsonl(path) -> list:
    out = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{n}: {exc}") from exc
    return out


def save_scene(scene: Scene, out_dir) -> Path:
    out = Path(out_dir)
    (out / "gt").mkdir(parents=True, exist_ok=True)
    (out / "config.toml").write_text(dumps(scene.config))
    det_records, corr_records = [], []
    for k, frame in enumerate(scene.detections):
        for side in SIDES:
            d = frame[side]
            det_records.append({"frame": k, "side": side,
                                "keypoints": np.asarray(d.keypoints, dtype=float).tolist(),
                                "bboxes": np.asarray(d.bboxes, dtype=float).tolist()})
            corr_records.append({"frame": k, "side": side, "seed_ids": np.asarray(d.seed_ids).astype(int).tolist()})
    _jsonl(out / "detections.jsonl", det_records)
    _jsonl(out / "gt" / "correspondences.jsonl", corr_records)
    seeds = {"positions": np.asarray(scene.seeds, dtype=float).tolist(),
             "panicle": np.asarray(scene.seed_panicle).astype(int).tolist()}
    (out / "gt" / "seeds.json").write_text(json.dumps(seeds) + "\n")
    write_trajectory(out / "gt" / "trajectory.txt", scene.poses)
    if scene.fk_poses is not None:
        (out / "fk").mkdir(exist_ok=True)
        write_trajectory(out / "fk" / "trajectory.txt", scene.fk_poses)
    if scene.clouds is not None:
        (out / "clouds").mkdir(exist_ok=True)
        for k, cloud in enumerate(scene.clouds):
            write_ply(out / "clouds" / CLOUD_NAME.format(k), cloud)
    return out


def load_scene(scene_dir, require_clouds: bool = False) -> Scene:
    """Read a scene directory written by :func:`save_scene`.

    Panicle geometry and the dense surface samples are not stored, so
    ``panicles`` is empty and ``surface`` is None on the loaded scene.
    Raises FileNotFoundError or ValueError for missing or malformed input.
    """
    root = Path(scene_dir)
    if not root.is_dir():
        raise FileNotFoundError(f"scene directory {root} does not exist")
    data = load_toml(root / "config.toml")
    config = scene_config_from_dict(data.get("scene", data))
    ids, poses = read_trajectory(root / "gt" / "trajectory.txt")
    if ids != list(range(len(ids))):
        raise ValueError("ground-truth trajectory must list frames 0..n-1 in order")
    n = len(poses)
    frames = [{} for _ in range(n)]
    seed_ids = {(r["frame"], r["side"]): r["seed_ids"] for r in _read_jsonl(root / "gt" / "correspondences.jsonl")}
    for rec in _read_jsonl(root / "detections.jsonl"):
        k, side = int(rec["frame"]), rec["side"]
        if not 0 <= k < n or side not in SIDES:
            raise ValueError(f"detection record for unknown frame/side ({k}, {side})")
        kp = np.asarray(rec["keypoints"], dtype=float).reshape(-1, 2)
        bb = np.asarray(rec["bboxes"], dtype=float).reshape(-1, 4)
        sid = np.asarray(seed_ids.get((k, side), [-1] * len(kp)), dtype=int)
        if len(sid) != len(kp):
            raise ValueError(f"correspondence table of frame {k} {side} does not match its detections")
        frames[k][side] = FrameDetections(kp, bb, sid)
    for k, frame in enumerate(frames):
        if set(frame) != {LEFT, RIGHT}:
            raise ValueError(f"frame {k} lacks detections for both sides")
    seeds = json.loads((root / "gt" / "seeds.json").read_text())
    positions = np.asarray(seeds["positions"], dtype=float).reshape(-1, 3)
    scene = Scene(config, config.camera.stereo_camera(), [], positions,
                  np.asarray(seeds["panicle"], dtype=int), poses, frames)
    fk_path = root / "fk" / "trajectory.txt"
    if fk_path.exists():
        scene.fk_poses = read_trajectory(fk_path)[1]
    cloud_dir = root / "clouds"
    if cloud_dir.is_dir():
        scene.clouds = [read_ply(cloud_dir / CLOUD_NAME.format(k)) for k in range(n)]
    elif require_clouds:
        raise FileNotFoundError(f"{cloud_dir} is missing")
    scene.visible = [{side: _visible_mask(frame[side].seed_ids, len(positions)) for side in SIDES}
                     for frame in frames]
    return scene


def _visible_mask(ids, n_seeds):
    mask = np.zeros(n_seeds, bool)
    ids = np.asarray(ids, dtype=int)
    mask[ids[ids >= 0]] = True
    return mask
