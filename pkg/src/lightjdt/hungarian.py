"""Minimum-cost bipartite assignment (Kuhn-Munkres, shortest augmenting paths)."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Assignment:
    pairs: list[tuple[int, int]]
    unmatched_rows: list[int] = field(default_factory=list)
    unmatched_cols: list[int] = field(default_factory=list)

    def total(self, cost) -> float:
        cost = np.asarray(cost, dtype=np.float64)
        return float(sum(cost[r, c] for r, c in self.pairs))


def _solve_rows_le_cols(cost: np.ndarray) -> np.ndarray:
    """Column index for every row; requires rows <= cols.

    Dijkstra-style potentials, one augmenting path per row. Ties pick the
    lowest column index (numpy argmin returns the first minimum), rows are
    inserted in increasing order, so the result is deterministic.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: row (1-based) owning column j; column 0 is the virtual root
    way = np.zeros(m + 1, dtype=np.int64)
    c = np.zeros((n + 1, m + 1))
    c[1:, 1:] = cost
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = c[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    col_of_row = np.full(n, -1, dtype=np.int64)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    return col_of_row


def _optimum(cost: np.ndarray) -> list[tuple[int, int]]:
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if n <= m:
        cols = _solve_rows_le_cols(cost)
        return [(i, int(cols[i])) for i in range(n)]
    rows = _solve_rows_le_cols(cost.T)
    return sorted((int(rows[j]), j) for j in range(m))


def _sub_total(cost: np.ndarray, rows: list[int], cols: list[int]) -> float:
    sub = cost[np.ix_(rows, cols)]
    return float(sum(sub[r, c] for r, c in _optimum(sub)))


def _lexicographic(cost: np.ndarray, best: float) -> list[tuple[int, int]]:
    """Among optimal assignments, the one whose row-sorted pair list is smallest.

    Greedy over rows: give each row the lowest column that still admits an
    optimal completion, or leave it unmatched when only that does.
    """
    n, m = cost.shape
    tol = 1e-9 * (1.0 + abs(best))
    free = list(range(m))
    pairs = []
    remaining = best
    for r in range(n):
        if not free:
            break
        rest = list(range(r + 1, n))
        chosen = None
        for c in free:
            others = [x for x in free if x != c]
            tail = _sub_total(cost, rest, others) if rest and others else 0.0
            if abs(cost[r, c] + tail - remaining) <= tol:
                chosen = c
                remaining -= cost[r, c]
                break
        if chosen is not None:
            pairs.append((r, chosen))
            free.remove(chosen)
        # otherwise the row stays unmatched; this is only optimal when rows outnumber columns
    return pairs


# lexicographic refinement re-solves O(rows * cols) subproblems; only worth it on small tied inputs
LEX_REFINE_MAX_CELLS = 400


def hungarian(cost) -> Assignment:
    """Minimum total cost matching of min(rows, cols) pairs.

    Pairs come back sorted by row. Among equal-cost optima the row-sorted
    pair list is lexicographically smallest (lowest row first, then lowest
    column), checked whenever the matrix has repeated values and at most
    ``LEX_REFINE_MAX_CELLS`` entries. Non-finite entries are rejected.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise ValueError("cost matrix contains non-finite entries")
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)))
    pairs = _optimum(cost)
    if cost.size <= LEX_REFINE_MAX_CELLS and np.unique(cost).size < cost.size:
        pairs = _lexicographic(cost, float(sum(cost[r, c] for r, c in pairs)))
    used_r = {r for r, _ in pairs}
    used_c = {c for _, c in pairs}
    return Assignment(pairs, [r for r in range(n) if r not in used_r], [c for c in range(m) if c not in used_c])


def masked_hungarian(cost, valid) -> Assignment:
    """Maximise the number of ``valid`` pairs first, then minimise their cost.

    Invalid entries get a penalty larger than any achievable valid total, so
    the solver trades any amount of cost for one more valid pair; invalid
    pairs are dropped from the result afterwards.
    """
    cost = np.asarray(cost, dtype=np.float64)
    valid = np.asarray(valid, dtype=bool)
    n, m = cost.shape
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)))
    span = float(np.abs(cost[valid]).sum()) if valid.any() else 0.0
    big = 2.0 * span + 1.0
    work = np.where(valid, cost, big)
    res = hungarian(work)
    pairs = [(r, c) for r, c in res.pairs if valid[r, c]]
    used_r = {r for r, _ in pairs}
    used_c = {c for _, c in pairs}
    return Assignment(pairs, [r for r in range(n) if r not in used_r], [c for c in range(m) if c not in used_c])
