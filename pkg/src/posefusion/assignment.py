"""Minimum-cost bipartite assignment (Kuhn-Munkres / Hungarian method).

Shortest-augmenting-path formulation with row/column potentials, O(n^2 m).
Forbidden pairs are marked with ``+inf``; they are replaced by a penalty
larger than any feasible total so the solver first maximizes the number of
allowed pairs and then minimizes their cost. Pairs that still land on a
forbidden entry are dropped from the result.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError


def _solve_rows_le_cols(C: np.ndarray) -> np.ndarray:
    """Assign every row of an n x m matrix (n <= m); returns column per row."""
    n, m = C.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    # p[j]: row (1-based) assigned to column j; column 0 is a virtual source
    p = np.zeros(m + 1, dtype=int)
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_of_row = np.full(n, -1, dtype=int)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def hungarian_solve(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment for an n x m cost matrix.

    Returns a list of ``(row, col)`` pairs sorted by row. At most
    ``min(n, m)`` pairs are returned; forbidden (``inf``) pairs never appear.
    """
    C = np.array(cost, dtype=float)
    if C.ndim != 2:
        raise ParameterError("cost matrix must be 2-D")
    if C.size == 0:
        return []
    if np.isnan(C).any() or np.isneginf(C).any():
        raise ParameterError("costs must be finite or +inf")
    forbidden = np.isposinf(C)
    if forbidden.all():
        return []
    finite = C[~forbidden]
    # big enough that one forbidden pair outweighs any sum of allowed ones
    span = float(finite.max() - min(finite.min(), 0.0))
    big = (span + 1.0) * (min(C.shape) + 1) + abs(float(finite.max()))
    C[forbidden] = big

    transposed = C.shape[0] > C.shape[1]
    if transposed:
        C = C.T
    cols = _solve_rows_le_cols(C)
    pairs = [(i, int(j)) for i, j in enumerate(cols) if j >= 0]
    if transposed:
        pairs = [(j, i) for i, j in pairs]
    return sorted((r, c) for r, c in pairs if not forbidden[r, c])


def assignment_cost(cost, pairs) -> float:
    C = np.asarray(cost, dtype=float)
    return float(sum(C[r, c] for r, c in pairs))
