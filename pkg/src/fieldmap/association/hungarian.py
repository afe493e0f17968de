"""Hungarian method for the linear sum assignment problem.

Shortest-augmenting-path formulation with row/column potentials: each row is
inserted by a Dijkstra search over reduced costs, which keeps the total at
O(n^3). A column/row reduction first assigns every row whose cheapest
reduced column is still free, so only the leftovers need a search. The inner
relaxation is vectorised over columns.
"""

from __future__ import annotations

import numpy as np


def hungarian(cost) -> np.ndarray:
    """Minimum-cost assignment of every row of a square or wide matrix.

    Returns ``col_for_row``. Among equal-cost alternatives the search always
    scans the lowest column index first, so results are deterministic.
    """
    c = np.asarray(cost, dtype=float)
    if c.ndim != 2:
        raise ValueError("cost matrix must be 2D")
    n_rows, n_cols = c.shape
    if n_rows > n_cols:
        raise ValueError("hungarian() needs n_rows <= n_cols; transpose first")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix entries must be finite")
    if n_rows == 0:
        return np.zeros(0, dtype=np.intp)

    col_for_row = np.full(n_rows, -1, dtype=np.intp)
    row_for_col = np.full(n_cols, -1, dtype=np.intp)

    # Feasible start: u_i + v_j <= c_ij, tight on every greedy assignment.
    v = c.min(axis=0) if n_rows == n_cols else np.zeros(n_cols)
    reduced0 = c - v
    best_col = np.argmin(reduced0, axis=1)
    u = reduced0[np.arange(n_rows), best_col]
    for i, j in enumerate(best_col):
        if row_for_col[j] < 0:
            row_for_col[j] = i
            col_for_row[i] = j

    inf = np.inf
    for start in np.flatnonzero(col_for_row < 0):
        start = int(start)
        shortest = np.full(n_cols, inf)  # tentative distances, inf once scanned
        final = np.empty(n_cols)  # settled distances of scanned columns
        via_row = np.full(n_cols, -1, dtype=np.intp)
        scanned_cols = np.zeros(n_cols, dtype=bool)
        scanned_rows = [start]
        row = start
        reach = 0.0
        sink = -1
        while sink < 0:
            reduced = c[row] - v
            reduced += reach - u[row]
            np.putmask(reduced, scanned_cols, inf)
            better = reduced < shortest
            np.copyto(shortest, reduced, where=better)
            via_row[better] = row

            col = int(shortest.argmin())
            reach = shortest[col]
            final[col] = reach
            shortest[col] = inf
            scanned_cols[col] = True
            if row_for_col[col] < 0:
                sink = col
            else:
                row = int(row_for_col[col])
                scanned_rows.append(row)

        # Potentials stay feasible and tight on the augmenting path.
        u[start] += reach
        for r in scanned_rows[1:]:
            u[r] += reach - final[col_for_row[r]]
        v[scanned_cols] -= reach - final[scanned_cols]

        col = sink
        while True:
            r = int(via_row[col])
            row_for_col[col] = r
            col, col_for_row[r] = col_for_row[r], col
            if r == start:
                break
    return col_for_row


def assignment_cost(cost, col_for_row) -> float:
    c = np.asarray(cost, dtype=float)
    return float(sum(c[i, j] for i, j in enumerate(col_for_row)))
