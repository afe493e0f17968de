"""Command-line entry point.

Exit codes: 0 success, 2 configuration or malformed data, 3 output I/O,
4 input I/O. Logging verbosity comes from ``FIELDMAP_LOG`` (error, info or
debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from fieldmap.config import ORBIT, ConfigError, RunConfig, dumps, load_run_config
from fieldmap.core.cloud import write_ply
from fieldmap.core.se3 import pose_error
from fieldmap.core.types import LEFT, RIGHT, PointCloud
from fieldmap.errors import EmptyInput

EXIT_OK, EXIT_CONFIG, EXIT_OUTPUT, EXIT_INPUT = 0, 2, 3, 4
ICP_MODES = {"full-cloud": "full_cloud", "seed-centers": "seed_centers"}
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}

log = logging.getLogger("fieldmap")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _round(obj):
    """Floats to 9 significant digits so metrics files compare byte for byte."""
    if isinstance(obj, float) or isinstance(obj, np.floating):
        x = float(obj)
        return x if not math.isfinite(x) else float(f"{x:.9g}")
    if isinstance(obj, dict):
        return {str(k): _round(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps_metrics(metrics: dict) -> str:
    return json.dumps(_round(metrics), indent=2, sort_keys=True, allow_nan=True) + "\n"


def _out_dir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_OUTPUT) from exc
    return out


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_OUTPUT) from exc


def _run_config(args, scene_config=None) -> RunConfig:
    """Config file (or defaults) with command-line overrides applied."""
    if getattr(args, "config", None) and not Path(args.config).is_file():
        raise CliError(f"config file {args.config} not found", EXIT_INPUT)
    cfg = load_run_config(getattr(args, "config", None))
    if scene_config is not None:
        cfg.scene = scene_config
    if getattr(args, "seed", None) is not None:
        cfg.scene = replace(cfg.scene, rng_seed=int(args.seed))
    match = cfg.match
    if getattr(args, "cost_variant", None) is not None:
        match = replace(match, cost_variant=args.cost_variant)
    if getattr(args, "threshold", None) is not None:
        match = replace(match, threshold=float(args.threshold))
    cfg.match = match
    return cfg.validate()


def _load_scene(path, require_clouds=False):
    from fieldmap.simulator.io import load_scene

    try:
        return load_scene(path, require_clouds=require_clouds)
    except ConfigError:
        raise
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"cannot read scene {path}: {exc}", EXIT_INPUT) from exc


def cmd_simulate(args) -> int:
    from fieldmap.simulator import generate_scene
    from fieldmap.simulator.io import save_scene

    cfg = _run_config(args)
    scene = generate_scene(cfg.scene)
    out = _out_dir(args.out)
    try:
        save_scene(scene, out)
    except OSError as exc:
        raise CliError(f"cannot write scene to {out}: {exc}", EXIT_OUTPUT) from exc
    n_det = sum(len(f[s].keypoints) for f in scene.detections for s in (LEFT, RIGHT))
    n_fp = sum(int(np.sum(f[s].seed_ids < 0)) for f in scene.detections for s in (LEFT, RIGHT))
    metrics = {"kind": scene.kind, "frames": scene.frame_count, "seeds": len(scene.seeds),
               "detections": n_det, "false_positives": n_fp, "rng_seed": cfg.scene.rng_seed}
    _write(out / "metrics.json", dumps_metrics(metrics))
    return EXIT_OK


def _frame_keypoints(scene, k):
    from fieldmap.pipeline import keypoints_from

    det = scene.detections[k]
    return keypoints_from(det[LEFT].keypoints, k, LEFT), keypoints_from(det[RIGHT].keypoints, k, RIGHT)


def cmd_match(args) -> int:
    from fieldmap.association import assignment_to_json
    from fieldmap.eval import match_accuracy
    from fieldmap.pipeline import associate

    scene = _load_scene(args.scene)
    cfg = _run_config(args, scene.config)
    params = cfg.match.matcher_params(scene.camera.width)
    records, totals = [], {"stereo": [0, 0, 0], "temporal": [0, 0, 0]}
    prev = None
    for k in range(scene.frame_count):
        left, right = _frame_keypoints(scene, k)
        det = scene.detections[k]
        jobs = [("stereo", k, left, right, (det[LEFT].seed_ids, det[RIGHT].seed_ids))]
        if prev is not None:
            jobs.append(("temporal", k - 1, prev, left, (scene.detections[k - 1][LEFT].seed_ids, det[LEFT].seed_ids)))
        for kind, frame_a, u, v, gt in jobs:
            assignment = associate(u, v, args.matcher, params, cfg.match)
            rec = assignment_to_json(assignment, frame_a, k, params)
            rec["kind"] = kind
            records.append(rec)
            rep = match_accuracy(assignment, gt)
            for n, value in enumerate((rep.tp, rep.fp, rep.fn)):
                totals[kind][n] += value
        prev = left
    metrics = {"matcher": args.matcher}
    for kind, (tp, fp, fn) in totals.items():
        precision = tp / (tp + fp) if tp + fp else None
        recall = tp / (tp + fn) if tp + fn else None
        f1 = (2 * precision * recall / (precision + recall)
              if precision is not None and recall is not None and precision + recall > 0 else None)
        metrics[kind] = {"tp": tp, "fp": fp, "fn": fn, "precision": precision, "recall": recall, "f1": f1}
    out = _out_dir(args.out)
    _write(out / "matches.jsonl", "".join(json.dumps(_round(r), sort_keys=True) + "\n" for r in records))
    _write(out / "metrics.json", dumps_metrics(metrics))
    _write(out / "config.toml", dumps(cfg))
    return EXIT_OK


def cmd_slam(args) -> int:
    from fieldmap.eval import trajectory_ate
    from fieldmap.pipeline import run_slam
    from fieldmap.simulator.io import format_trajectory

    scene = _load_scene(args.scene)
    cfg = _run_config(args, scene.config)
    run = run_slam(scene, cfg, args.matcher)
    metrics = run.metrics()
    metrics["range_length"] = run.range_length
    metrics["matcher"] = args.matcher
    if len(run.frame_ids) >= 3:
        gt = [scene.poses[k] for k in run.frame_ids]
        metrics["ate_rmse"] = trajectory_ate(run.trajectory, gt, run.frame_ids, run.frame_ids)["rmse"]
    else:
        metrics["ate_rmse"] = None
    out = _out_dir(args.out)
    _write(out / "trajectory.txt", format_trajectory(run.trajectory, run.frame_ids))
    points = np.array([run.landmarks[k] for k in sorted(run.landmarks)]).reshape(-1, 3)
    try:
        write_ply(out / "map.ply", PointCloud(points))
    except OSError as exc:
        raise CliError(f"cannot write map: {exc}", EXIT_OUTPUT) from exc
    _write(out / "metrics.json", dumps_metrics(metrics))
    _write(out / "config.toml", dumps(cfg))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from fieldmap.icp import blur_metric, fuse
    from fieldmap.pipeline import run_reconstruction

    scene = _load_scene(args.scene, require_clouds=True)
    if scene.fk_poses is None:
        raise CliError(f"{args.scene} has no forward-kinematics trajectory", EXIT_INPUT)
    cfg = _run_config(args, scene.config)
    mode = ICP_MODES[args.icp] if args.icp else cfg.icp.mode
    run = run_reconstruction(scene, cfg, mode)
    t_err, r_err = pose_error(run.poses[-1], scene.poses[-1])
    world = fuse(list(zip(scene.clouds, run.poses)), voxel=None)
    metrics = {
        "mode": mode,
        "frames": scene.frame_count,
        "fallbacks": sum(r.fallback for r in run.registrations),
        "final_translation_error": t_err,
        "final_rotation_error": r_err,
        "fused_points": len(run.fused),
        "blur": blur_metric(world, scene.seeds, scene.config.lattice.seed_radius),
    }
    out = _out_dir(args.out)
    try:
        write_ply(out / "panicle.ply", run.fused)
    except OSError as exc:
        raise CliError(f"cannot write fused cloud: {exc}", EXIT_OUTPUT) from exc
    _write(out / "registration.json", json.dumps(_round([r.to_dict() for r in run.registrations]),
                                                 indent=2, sort_keys=True) + "\n")
    _write(out / "metrics.json", dumps_metrics(metrics))
    _write(out / "config.toml", dumps(cfg))
    return EXIT_OK


def _read_metrics(path):
    try:
        data = json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_INPUT) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: malformed JSON: {exc}", EXIT_CONFIG) from exc
    return data


def cmd_eval(args) -> int:
    """Aggregate SLAM metrics files, or run paired ICP-mode trials."""
    from fieldmap.eval import RangeResult, aggregate_distance_mapped, compare_icp_modes

    report = {}
    if args.icp_trials:
        cfg = _run_config(args)
        scene_cfg = cfg.scene if cfg.scene.kind == ORBIT else replace(cfg.scene, kind=ORBIT)
        start = cfg.scene.rng_seed
        comparison = compare_icp_modes(scene_cfg, range(start, start + args.icp_trials), cfg)
        report["icp_modes"] = comparison.to_dict()
    if args.inputs:
        results = []
        for path in args.inputs:
            data = _read_metrics(path)
            try:
                length = float(data["range_length"])
                mapped = data["distance_mapped"]
                results.append(RangeResult(str(path), length, float(mapped)))
            except (KeyError, TypeError, ValueError) as exc:
                raise CliError(f"{path}: not a SLAM metrics file ({exc})", EXIT_CONFIG) from exc
        report["ranges"] = [{"input": r.range_id, "range_length": r.range_length,
                             "mapped": r.mapped, "fraction": r.fraction} for r in results]
        report["mean_fraction"] = aggregate_distance_mapped(results)
    if not report:
        raise EmptyInput("nothing to evaluate: give SLAM metrics files or --icp-trials")
    out = _out_dir(args.out)
    _write(out / "report.json", dumps_metrics(report))
    return EXIT_OK


def _table_text(name, table):
    from fieldmap.eval import aggregate_distance_mapped, table_results

    methods = table["methods"]
    lines = [table.get("caption", name), "range  length  " + "  ".join(f"{m:>10}" for m in methods)]
    for row in table["ranges"]:
        cells = []
        for m in methods:
            v = row["mapped"][m]
            cells.append(f"{'Failed' if v is None else f'{v:.2f} m':>10}")
        lines.append(f"{row['range']:>5}  {row['length']:5.2f} m  " + "  ".join(cells))
    means = {m: aggregate_distance_mapped(table_results(m, table)) for m in methods}
    lines.append("mean fraction  " + "  ".join(f"{100 * means[m]:9.1f}%" for m in methods))
    return "\n".join(lines), means


def cmd_table1(args) -> int:
    from fieldmap.eval import load_published_tables

    if args.data:
        data = _read_metrics(args.data)
    else:
        data = load_published_tables()
    tables = {k: v for k, v in data.items() if isinstance(v, dict) and "ranges" in v}
    if not tables:
        raise CliError("data file has no tables", EXIT_CONFIG)
    summary = {}
    try:
        for name, table in tables.items():
            text, means = _table_text(name, table)
            print(text)
            print()
            summary[name] = means
    except (KeyError, TypeError, ValueError) as exc:
        raise CliError(f"malformed table data: {exc}", EXIT_CONFIG) from exc
    if args.out:
        out = _out_dir(args.out)
        _write(out / "metrics.json", dumps_metrics({"mean_fraction": summary}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fieldmap", description="Seed-landmark mapping and panicle reconstruction.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, help="override scene.rng_seed")

    def matching(p):
        p.add_argument("--cost-variant", choices=("literal", "deviation"))
        p.add_argument("--threshold", type=float, help="confidence filter threshold")
        p.add_argument("--matcher", choices=("structural", "baseline"), default="structural")

    p = sub.add_parser("simulate", help="generate a synthetic scene directory")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("match", help="stereo and temporal association over a scene")
    p.add_argument("scene")
    common(p)
    matching(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("slam", help="track a range scene")
    p.add_argument("scene")
    common(p)
    matching(p)
    p.set_defaults(func=cmd_slam)

    p = sub.add_parser("reconstruct", help="chained ICP and fusion of an orbit scene")
    p.add_argument("scene")
    common(p)
    p.add_argument("--icp", choices=sorted(ICP_MODES))
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="aggregate SLAM metrics or compare ICP modes")
    p.add_argument("inputs", nargs="*", help="metrics.json files written by 'slam'")
    common(p)
    p.add_argument("--icp-trials", type=int, default=0, help="paired orbit trials to run")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("table1", help="print the bundled published tables and their averages")
    p.add_argument("--data", help="alternative tables JSON file")
    p.add_argument("--out", help="also write metrics.json here")
    p.set_defaults(func=cmd_table1)
    return parser


def _setup_logging():
    level = LOG_LEVELS.get(os.environ.get("FIELDMAP_LOG", "error").lower(), logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        field = f" [{exc.field}]" if exc.field else ""
        print(f"config error{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EmptyInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
