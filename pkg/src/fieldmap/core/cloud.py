"""Point-cloud helpers: voxel-grid downsampling and ASCII PLY I/O."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from fieldmap.core.types import PointCloud

DEFAULT_VOXEL = 0.03


def voxel_downsample(cloud: PointCloud, cell: float = DEFAULT_VOXEL) -> PointCloud:
    """Replace the points of every occupied cell by their centroid.

    Output points are ordered by cell index, so the result does not depend on
    input ordering beyond floating-point summation order.
    """
    if not cell > 0:
        raise ValueError("cell size must be positive")
    if len(cloud) == 0:
        return PointCloud.empty()
    keys = np.floor(cloud.points / cell).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.ravel()
    n_cells = counts.size
    sums = np.zeros((n_cells, 3))
    np.add.at(sums, inverse, cloud.points)
    centroids = sums / counts[:, None]
    colors = None
    if cloud.colors is not None:
        csum = np.zeros((n_cells, 3))
        np.add.at(csum, inverse, cloud.colors.astype(float))
        colors = csum / counts[:, None]
    return PointCloud(centroids, colors)


def transform_cloud(cloud: PointCloud, pose) -> PointCloud:
    return PointCloud(pose.apply(cloud.points), cloud.colors)


def concatenate(clouds) -> PointCloud:
    clouds = [c for c in clouds if len(c)]
    if not clouds:
        return PointCloud.empty()
    pts = np.vstack([c.points for c in clouds])
    if all(c.colors is not None for c in clouds):
        cols = np.vstack([c.colors for c in clouds])
    else:
        cols = None
    return PointCloud(pts, cols)


def write_ply(path, cloud: PointCloud, default_color=(255, 255, 255)) -> None:
    """Write an ASCII PLY with x y z red green blue vertex properties."""
    n = len(cloud)
    colors = cloud.colors
    if colors is None:
        colors = np.tile(np.asarray(default_color, dtype=np.uint8), (n, 1))
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for p, c in zip(cloud.points, colors):
        lines.append(f"{p[0]:.10f} {p[1]:.10f} {p[2]:.10f} {c[0]:d} {c[1]:d} {c[2]:d}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ply(path) -> PointCloud:
    """Read an ASCII PLY written by :func:`write_ply` (or any x y z [r g b] vertex list)."""
    text = Path(path).read_text().splitlines()
    if not text or text[0].strip() != "ply":
        raise ValueError(f"{path}: not a PLY file")
    n = None
    props = []
    body_start = None
    for i, line in enumerate(text):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format" and parts[1] != "ascii":
            raise ValueError(f"{path}: only ASCII PLY is supported")
        if parts[0] == "element" and parts[1] == "vertex":
            n = int(parts[2])
        elif parts[0] == "property" and n is not None:
            props.append(parts[-1])
        elif parts[0] == "end_header":
            body_start = i + 1
            break
    if n is None or body_start is None:
        raise ValueError(f"{path}: malformed PLY header")
    if n == 0:
        return PointCloud.empty()
    data = np.loadtxt(text[body_start:body_start + n], ndmin=2)
    idx = {name: k for k, name in enumerate(props)}
    pts = data[:, [idx["x"], idx["y"], idx["z"]]]
    cols = None
    if all(k in idx for k in ("red", "green", "blue")):
        cols = data[:, [idx["red"], idx["green"], idx["blue"]]]
    return PointCloud(pts, cols)
