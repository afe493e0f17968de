"""Structural matching cost between seed keypoints of two images.

Every node gets four directional neighbour sets (left, right, top, bottom)
drawn from the other detections of its own image. The cost of pairing two
nodes compares, direction by direction, the summed pixel distances to those
neighbours, and adds the absolute vertical offset between the two nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from fieldmap.core.types import SeedKeypoint
from fieldmap.errors import EmptySide

LITERAL = "literal"
DEVIATION = "deviation"
COST_VARIANTS = (LITERAL, DEVIATION)

# Term value when a neighbour-distance denominator is zero. Unreachable for
# the strict window inequalities, kept so costs stay finite regardless.
ZERO_DENOMINATOR_COST = 1e6

_DIRECTIONS = ("left", "right", "bottom", "top")


@dataclass
class NeighborSets:
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    top: list = field(default_factory=list)
    bottom: list = field(default_factory=list)
    delta: float = 0.0
    epsilon: float = 0.0

    def by_direction(self):
        return {d: getattr(self, d) for d in _DIRECTIONS}


@dataclass
class BipartiteGraph:
    u_nodes: list
    v_nodes: list

    def u_points(self) -> np.ndarray:
        return _points(self.u_nodes)

    def v_points(self) -> np.ndarray:
        return _points(self.v_nodes)


@dataclass
class CostMatrix:
    """Square (padded) cost matrix; rows >= n_u and columns >= n_v are dummies."""

    values: np.ndarray
    n_u: int
    n_v: int
    r: float
    dummy_cost: float
    cost_variant: str = LITERAL

    @property
    def real(self) -> np.ndarray:
        return self.values[: self.n_u, : self.n_v]


def _points(nodes) -> np.ndarray:
    if len(nodes) == 0:
        return np.zeros((0, 2))
    return np.array([[k.center.u, k.center.v] for k in nodes], dtype=float)


def neighbor_sets(node: SeedKeypoint, peers: Sequence[SeedKeypoint],
                  delta: float, epsilon: float) -> NeighborSets:
    if not (delta > 0 and epsilon > 0):
        raise ValueError("delta and epsilon must be positive")
    a, b = node.center
    sets = NeighborSets(delta=delta, epsilon=epsilon)
    for peer in peers:
        c, d = peer.center
        if 0 < a - c < delta and abs(d - b) < epsilon:
            sets.left.append(peer)
        if 0 < c - a < delta and abs(d - b) < epsilon:
            sets.right.append(peer)
        if 0 < b - d < delta and abs(c - a) < epsilon:
            sets.top.append(peer)
        if 0 < d - b < delta and abs(c - a) < epsilon:
            sets.bottom.append(peer)
    return sets


def _distance_sum(members, center) -> float:
    x0, y0 = center
    return sum(math.sqrt((s.center.u - x0) ** 2 + (s.center.v - y0) ** 2) for s in members)


def _term(ratio: float, variant: str) -> float:
    if variant == LITERAL:
        return ratio
    if variant == DEVIATION:
        return abs(1.0 - ratio)
    raise ValueError(f"unknown cost variant {variant!r}")


def structural_cost(s_ab: SeedKeypoint, sets_ab: NeighborSets,
                    s_mn: SeedKeypoint, sets_mn: NeighborSets,
                    r: float, variant: str = LITERAL) -> float:
    """Cost of associating ``s_ab`` (image A) with ``s_mn`` (image B).

    A direction whose neighbour set is empty on either side contributes 0.
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    total = 0.0
    for direction in _DIRECTIONS:
        x = getattr(sets_ab, direction)
        y = getattr(sets_mn, direction)
        if not x or not y:
            continue
        num = _distance_sum(x, s_ab.center)
        den = _distance_sum(y, s_mn.center)
        if den == 0.0:
            total += ZERO_DENOMINATOR_COST
            continue
        total += r * _term(num / den, variant)
    return total + abs(s_ab.center.v - s_mn.center.v)


def neighbor_distance_sums(points: np.ndarray, delta: float, epsilon: float):
    """Per-node directional distance sums for a whole image at once.

    Returns ``(sums, nonempty)``, both (N, 4) in left, right, bottom, top order.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    a = pts[:, 0][:, None]
    b = pts[:, 1][:, None]
    c = pts[:, 0][None, :]
    d = pts[:, 1][None, :]
    dist = np.sqrt((c - a) ** 2 + (d - b) ** 2)
    row_band = np.abs(d - b) < epsilon
    col_band = np.abs(c - a) < epsilon
    masks = (
        (0 < a - c) & (a - c < delta) & row_band,
        (0 < c - a) & (c - a < delta) & row_band,
        (0 < d - b) & (d - b < delta) & col_band,
        (0 < b - d) & (b - d < delta) & col_band,
    )
    sums = np.column_stack([np.where(m, dist, 0.0).sum(axis=1) for m in masks])
    nonempty = np.column_stack([m.any(axis=1) for m in masks])
    return sums, nonempty


def pairwise_structural_costs(u_points, v_points, delta, epsilon, r, variant=LITERAL):
    """Dense (N_u, N_v) matrix of :func:`structural_cost` values."""
    if variant not in COST_VARIANTS:
        raise ValueError(f"unknown cost variant {variant!r}")
    u_points = np.asarray(u_points, dtype=float).reshape(-1, 2)
    v_points = np.asarray(v_points, dtype=float).reshape(-1, 2)
    su, nu = neighbor_distance_sums(u_points, delta, epsilon)
    sv, nv = neighbor_distance_sums(v_points, delta, epsilon)
    costs = np.abs(u_points[:, 1][:, None] - v_points[:, 1][None, :])
    for k in range(4):
        both = nu[:, k][:, None] & nv[:, k][None, :]
        den = np.broadcast_to(sv[:, k][None, :], both.shape)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = su[:, k][:, None] / den
        term = r * (ratio if variant == LITERAL else np.abs(1.0 - ratio))
        term = np.where(den == 0.0, ZERO_DENOMINATOR_COST, term)
        costs = costs + np.where(both, term, 0.0)
    return costs


def build_cost_matrix(graph: BipartiteGraph, delta: float, epsilon: float, r: float,
                      variant: str = LITERAL) -> CostMatrix:
    """Cost matrix padded to square with dummy rows or columns.

    Dummy entries cost ten times the largest real entry plus one, so no real
    pairing is ever displaced by a dummy one.
    """
    n_u, n_v = len(graph.u_nodes), len(graph.v_nodes)
    if n_u == 0 or n_v == 0:
        raise EmptySide(f"both node sets must be non-empty (got {n_u} and {n_v})")
    real = pairwise_structural_costs(graph.u_points(), graph.v_points(), delta, epsilon, r, variant)
    dummy = 10.0 * float(real.max()) + 1.0
    n = max(n_u, n_v)
    values = np.full((n, n), dummy)
    values[:n_u, :n_v] = real
    return CostMatrix(values=values, n_u=n_u, n_v=n_v, r=r, dummy_cost=dummy, cost_variant=variant)
