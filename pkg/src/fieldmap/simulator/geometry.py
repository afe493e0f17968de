"""Panicle shells, seed lattices and ray visibility."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation


@dataclass
class Panicle:
    """Ellipsoidal seed shell; ``rotation`` maps panicle-local axes to world axes.

    Local axis 1 (world y, pointing down) is the long, vertical axis.
    """

    id: int
    center: np.ndarray
    rotation: np.ndarray
    semi_axes: np.ndarray

    def to_local(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.center) @ self.rotation

    def to_world(self, local) -> np.ndarray:
        return np.asarray(local, dtype=float) @ self.rotation.T + self.center

    def normals(self, points) -> np.ndarray:
        """Outward unit normals at world points on (or near) the shell."""
        grad = self.to_local(points) / self.semi_axes**2
        n = grad @ self.rotation.T
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def shell_points(self, theta, phi, scale=1.0) -> np.ndarray:
        """World points at polar angle ``theta`` (from the top) and azimuth ``phi``."""
        a, c, b = self.semi_axes * scale
        local = np.column_stack([
            a * np.sin(theta) * np.cos(phi),
            -c * np.cos(theta),
            b * np.sin(theta) * np.sin(phi),
        ])
        return self.to_world(local)


def make_panicle(pid, center, semi_axes, rng, yaw=None, tilt_sigma=np.deg2rad(3.0)) -> Panicle:
    yaw = rng.uniform(0.0, 2.0 * np.pi) if yaw is None else yaw
    tilt = rng.normal(0.0, tilt_sigma, size=2) if tilt_sigma > 0 else np.zeros(2)
    rot = Rotation.from_euler("zxy", [tilt[0], tilt[1], yaw]).as_matrix()
    return Panicle(pid, np.asarray(center, dtype=float), rot, np.asarray(semi_axes, dtype=float))


def _meridian_arc(a, c, theta):
    """Arc length along the meridian from the top pole to ``theta``."""
    grid = np.linspace(0.0, np.pi, 2049)
    speed = np.sqrt((a * np.cos(grid)) ** 2 + (c * np.sin(grid)) ** 2)
    cumulative = np.concatenate([[0.0], np.cumsum(0.5 * (speed[1:] + speed[:-1]) * np.diff(grid))])
    return np.interp(theta, grid, cumulative), grid, cumulative


def ring_lattice(semi_axes, n_seeds, jitter, rng, phase=0.0):
    """Seed (theta, phi) angles on horizontal rings of roughly equal pitch.

    Rings are spaced evenly in meridian arc length; each ring gets seeds in
    proportion to its circumference (largest-remainder rounding so the total
    is exactly ``n_seeds``), and alternate rings are offset by half a step.
    ``jitter`` perturbs every seed by that fraction of the local spacing.
    """
    a, c, _ = semi_axes
    _, grid, cumulative = _meridian_arc(a, c, np.pi)
    meridian = cumulative[-1]
    # Ellipsoid-of-revolution area, Knud Thomsen's approximation.
    p = 1.6075
    area = 4 * np.pi * ((2 * (a * c) ** p + a ** (2 * p)) / 3) ** (1 / p)
    pitch = np.sqrt(area / n_seeds)
    n_rings = max(2, int(round(meridian / pitch)))
    ring_s = (np.arange(n_rings) + 0.5) * meridian / n_rings
    theta = np.interp(ring_s, cumulative, grid)
    circumference = 2 * np.pi * a * np.sin(theta)
    share = n_seeds * circumference / circumference.sum()
    counts = np.floor(share).astype(int)
    for k in np.argsort(-(share - counts), kind="stable")[: n_seeds - counts.sum()]:
        counts[k] += 1

    thetas, phis = [], []
    d_theta = np.pi / n_rings
    for k, (th, m) in enumerate(zip(theta, counts)):
        if m == 0:
            continue
        step = 2 * np.pi / m
        ph = phase + step * (np.arange(m) + 0.5 * (k % 2))
        thetas.append(np.full(m, th))
        phis.append(ph)
    thetas = np.concatenate(thetas)
    phis = np.concatenate(phis)
    ring_step = 2 * np.pi / np.repeat(counts[counts > 0], counts[counts > 0])
    if jitter > 0:
        thetas = np.clip(thetas + rng.normal(0, jitter * d_theta, thetas.size), 1e-3, np.pi - 1e-3)
        phis = phis + rng.normal(0, jitter * ring_step, phis.size)
    return thetas, np.mod(phis, 2 * np.pi), pitch


def ray_ellipsoid_entry(origin, targets, panicle: Panicle) -> np.ndarray:
    """Smallest ray parameter t >= 0 where ``origin + t (target - origin)`` meets the shell.

    Returns inf where the ray misses. t = 1 is the target itself.
    """
    o = panicle.to_local(np.asarray(origin, dtype=float)[None, :])[0] / panicle.semi_axes
    d = (panicle.to_local(targets) - panicle.to_local(np.asarray(origin, dtype=float)[None, :])) / panicle.semi_axes
    A = np.einsum("ij,ij->i", d, d)
    B = 2.0 * d @ o
    C = o @ o - 1.0
    disc = B * B - 4 * A * C
    t = np.full(len(d), np.inf)
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-B - sq) / (2 * A)
    t1 = (-B + sq) / (2 * A)
    first = np.where(t0 >= 0, t0, t1)
    ok = hit & (first >= 0)
    t[ok] = first[ok]
    return t


def visible_from(origin, points, normals, owner, panicles, occluders=True) -> np.ndarray:
    """Seeds facing ``origin`` and not hidden behind another panicle.

    Self-occlusion on a convex shell reduces to the facing test. Other shells
    occlude when the ray enters them before reaching the seed.
    """
    origin = np.asarray(origin, dtype=float)
    facing = np.einsum("ij,ij->i", origin - points, normals) > 0
    if not occluders or len(panicles) < 2:
        return facing
    vis = facing.copy()
    idx = np.nonzero(facing)[0]
    for pan in panicles:
        cand = idx[owner[idx] != pan.id]
        if cand.size == 0:
            continue
        t = ray_ellipsoid_entry(origin, points[cand], pan)
        vis[cand[t < 1.0 - 1e-9]] = False
    return vis
