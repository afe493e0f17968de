"""Assignments, confidence and motion filters, and the matcher front doors."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from fieldmap.association.cost import (
    COST_VARIANTS,
    LITERAL,
    BipartiteGraph,
    CostMatrix,
    build_cost_matrix,
)
from fieldmap.association.hungarian import hungarian

LEFT_TO_RIGHT = "left-to-right"
RIGHT_TO_LEFT = "right-to-left"
ANY_DIRECTION = "any"
DIRECTIONS = (LEFT_TO_RIGHT, RIGHT_TO_LEFT, ANY_DIRECTION)


class Match(NamedTuple):
    i: int
    j: int
    cost: float


@dataclass
class Assignment:
    matches: list = field(default_factory=list)
    unmatched_u: list = field(default_factory=list)
    unmatched_v: list = field(default_factory=list)
    graph: Optional[BipartiteGraph] = field(default=None, repr=False, compare=False)

    @property
    def total_cost(self) -> float:
        return float(sum(m.cost for m in self.matches))

    def pairs(self) -> list[tuple[int, int]]:
        return [(m.i, m.j) for m in self.matches]

    def as_dict(self) -> dict[int, int]:
        return {m.i: m.j for m in self.matches}

    def _without(self, drop) -> "Assignment":
        keep = [m for m in self.matches if not drop(m)]
        gone = [m for m in self.matches if drop(m)]
        return replace(
            self,
            matches=keep,
            unmatched_u=sorted(self.unmatched_u + [m.i for m in gone]),
            unmatched_v=sorted(self.unmatched_v + [m.j for m in gone]),
        )


@dataclass(frozen=True)
class MatcherParams:
    """Structural-matcher settings. None of these values come with the method;
    :meth:`for_image_width` derives scale-consistent defaults from the image size."""

    delta: float = 64.0
    epsilon: float = 16.0
    r: float = 16.0
    threshold: float = 160.0
    cost_variant: str = LITERAL

    def __post_init__(self):
        if not (self.delta > 0 and self.epsilon > 0):
            raise ValueError("delta and epsilon must be positive")
        if self.r < 0:
            raise ValueError("r must be non-negative")
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.cost_variant not in COST_VARIANTS:
            raise ValueError(f"cost_variant must be one of {COST_VARIANTS}")

    @classmethod
    def for_image_width(cls, width: float, **overrides) -> "MatcherParams":
        delta = overrides.pop("delta", 0.1 * width)
        epsilon = overrides.pop("epsilon", 0.25 * delta)
        r = overrides.pop("r", epsilon)
        threshold = overrides.pop("threshold", 2.0 * (4.0 * r + epsilon))
        return cls(delta=delta, epsilon=epsilon, r=r, threshold=threshold, **overrides)

    def as_dict(self) -> dict:
        return {
            "delta": self.delta,
            "epsilon": self.epsilon,
            "r": self.r,
            "threshold": self.threshold,
            "cost_variant": self.cost_variant,
        }


def solve_lsap(costs: CostMatrix, graph: Optional[BipartiteGraph] = None) -> Assignment:
    """Optimal assignment of a padded cost matrix; dummy pairings become unmatched nodes."""
    values = np.asarray(costs.values, dtype=float)
    if values.shape[0] != values.shape[1]:
        raise ValueError("cost matrix must be square; use build_cost_matrix to pad")
    if np.any(values < 0):
        raise ValueError("costs must be non-negative")
    col_for_row = hungarian(values)
    matches, unmatched_u, matched_v = [], [], set()
    for i, j in enumerate(col_for_row):
        j = int(j)
        if i < costs.n_u and j < costs.n_v:
            matches.append(Match(i, j, float(values[i, j])))
            matched_v.add(j)
        elif i < costs.n_u:
            unmatched_u.append(i)
    unmatched_v = [j for j in range(costs.n_v) if j not in matched_v]
    return Assignment(matches, unmatched_u, unmatched_v, graph)


def filter_by_cost(assignment: Assignment, threshold: float) -> Assignment:
    """Keep only matches whose cost does not exceed ``threshold``."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    return assignment._without(lambda m: m.cost > threshold)


def filter_by_motion(assignment: Assignment, max_vertical: float,
                     horizontal_sign: str = ANY_DIRECTION,
                     max_horizontal: Optional[float] = None) -> Assignment:
    """Drop matches that break the horizontal-travel assumption.

    A match goes if its vertical offset exceeds ``max_vertical`` or if its
    horizontal displacement (image B minus image A) points against
    ``horizontal_sign``. ``max_horizontal`` optionally bounds the magnitude.
    """
    if assignment.graph is None:
        raise ValueError("motion filtering needs the assignment's keypoints")
    if horizontal_sign not in DIRECTIONS:
        raise ValueError(f"horizontal_sign must be one of {DIRECTIONS}")
    u_nodes, v_nodes = assignment.graph.u_nodes, assignment.graph.v_nodes

    def inconsistent(m: Match) -> bool:
        a, b = u_nodes[m.i].center, v_nodes[m.j].center
        du = b.u - a.u
        if abs(b.v - a.v) > max_vertical:
            return True
        if horizontal_sign == LEFT_TO_RIGHT and du < 0:
            return True
        if horizontal_sign == RIGHT_TO_LEFT and du > 0:
            return True
        return max_horizontal is not None and abs(du) > max_horizontal

    return assignment._without(inconsistent)


def baseline_nn_match(graph: BipartiteGraph, max_dist: float = np.inf) -> Assignment:
    """Mutual nearest neighbours in pixel space, a descriptor-free baseline.

    The cost of a match is its pixel distance.
    """
    n_u, n_v = len(graph.u_nodes), len(graph.v_nodes)
    if n_u == 0 or n_v == 0:
        return Assignment([], list(range(n_u)), list(range(n_v)), graph)
    pu, pv = graph.u_points(), graph.v_points()
    dist = np.sqrt(((pu[:, None, :] - pv[None, :, :]) ** 2).sum(axis=2))
    best_v = np.argmin(dist, axis=1)
    best_u = np.argmin(dist, axis=0)
    matches = [
        Match(i, int(j), float(dist[i, j]))
        for i, j in enumerate(best_v)
        if best_u[j] == i and dist[i, j] <= max_dist
    ]
    mu = {m.i for m in matches}
    mv = {m.j for m in matches}
    return Assignment(
        matches,
        [i for i in range(n_u) if i not in mu],
        [j for j in range(n_v) if j not in mv],
        graph,
    )


def structural_match(u_nodes, v_nodes, params: MatcherParams) -> Assignment:
    """Build, solve and confidence-filter one structural association (no motion filter)."""
    graph = BipartiteGraph(list(u_nodes), list(v_nodes))
    if not graph.u_nodes or not graph.v_nodes:
        return Assignment([], list(range(len(graph.u_nodes))), list(range(len(graph.v_nodes))), graph)
    costs = build_cost_matrix(graph, params.delta, params.epsilon, params.r, params.cost_variant)
    return filter_by_cost(solve_lsap(costs, graph), params.threshold)


def assignment_to_json(assignment: Assignment, frame_a, frame_b, params: MatcherParams) -> dict:
    return {
        "frame_a": frame_a,
        "frame_b": frame_b,
        "matches": [
            {"u_index": m.i, "v_index": m.j, "cost": m.cost} for m in assignment.matches
        ],
        "unmatched_u": list(assignment.unmatched_u),
        "unmatched_v": list(assignment.unmatched_v),
        "params": params.as_dict(),
    }


def assignment_from_json(data: dict) -> Assignment:
    return Assignment(
        [Match(int(m["u_index"]), int(m["v_index"]), float(m["cost"])) for m in data["matches"]],
        [int(i) for i in data["unmatched_u"]],
        [int(j) for j in data["unmatched_v"]],
    )
