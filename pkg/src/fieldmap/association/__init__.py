"""Structural data association between stereo pairs and consecutive frames."""

from fieldmap.association.cost import (
    DEVIATION,
    LITERAL,
    BipartiteGraph,
    CostMatrix,
    NeighborSets,
    build_cost_matrix,
    neighbor_distance_sums,
    neighbor_sets,
    pairwise_structural_costs,
    structural_cost,
)
from fieldmap.association.hungarian import assignment_cost, hungarian
from fieldmap.association.matching import (
    ANY_DIRECTION,
    LEFT_TO_RIGHT,
    RIGHT_TO_LEFT,
    Assignment,
    Match,
    MatcherParams,
    assignment_from_json,
    assignment_to_json,
    baseline_nn_match,
    filter_by_cost,
    filter_by_motion,
    solve_lsap,
    structural_match,
)

__all__ = [
    "ANY_DIRECTION",
    "DEVIATION",
    "LEFT_TO_RIGHT",
    "LITERAL",
    "RIGHT_TO_LEFT",
    "Assignment",
    "BipartiteGraph",
    "CostMatrix",
    "Match",
    "MatcherParams",
    "NeighborSets",
    "assignment_cost",
    "assignment_from_json",
    "assignment_to_json",
    "baseline_nn_match",
    "build_cost_matrix",
    "filter_by_cost",
    "filter_by_motion",
    "hungarian",
    "neighbor_distance_sums",
    "neighbor_sets",
    "pairwise_structural_costs",
    "solve_lsap",
    "structural_cost",
    "structural_match",
]
