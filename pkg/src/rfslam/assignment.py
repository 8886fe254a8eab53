"""Min-cost rectangular assignment and Murty's ranked k-best assignments.

Cost matrices are (rows x cols) with rows <= cols; every row must be
assigned to a distinct column, columns may stay unassigned.  Forbidden
pairings are encoded as +inf.  Ties between equal-cost assignments are
broken lexicographically on the row-to-column vector so results are
reproducible.
"""

import heapq
import math
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment


class InfeasibleCostError(ValueError):
    """No assignment of every row to a distinct finite column exists."""


class Assignment(NamedTuple):
    row_to_col: tuple
    total_cost: float


def _solve(cost):
    """Optimal assignment or None when infeasible."""
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:
        return None
    total = cost[rows, cols].sum()
    if not np.isfinite(total):
        return None
    r2c = np.empty(cost.shape[0], dtype=int)
    r2c[rows] = cols
    return Assignment(tuple(int(c) for c in r2c), float(total))


def solve_min_cost(cost) -> Assignment:
    """Globally optimal min-cost assignment of every row to a distinct column."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] > cost.shape[1]:
        raise ValueError(f"expected rows <= cols, got shape {cost.shape}")
    best = _solve(cost)
    if best is None:
        raise InfeasibleCostError("cost matrix admits no feasible assignment")
    return best


def murty_kbest(cost, k) -> list:
    """Up to k distinct assignments in nondecreasing cost order.

    k may be math.inf (or None) to enumerate every feasible assignment.
    The first element always equals solve_min_cost(cost).
    """
    if k is None:
        k = math.inf
    if k < 1:
        raise ValueError("k must be at least 1")
    if not math.isinf(k):
        k = int(k)
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] > cost.shape[1]:
        raise ValueError(f"expected rows <= cols, got shape {cost.shape}")

    finite_cols = [np.flatnonzero(np.isfinite(row)) for row in cost]
    if any(len(c) == 0 for c in finite_cols):
        raise InfeasibleCostError("cost matrix admits no feasible assignment")
    n_finite = sum(len(c) for c in finite_cols)
    if n_finite == len(set(int(c) for cols in finite_cols for c in cols)):
        # no two rows share a finite column: rows choose independently
        return _kbest_disjoint_rows(cost, finite_cols, k)

    first = solve_min_cost(cost)
    # heap of (cost, row_to_col, subproblem matrix); tuple comparison breaks
    # ties lexicographically on row_to_col
    heap = [(first.total_cost, first.row_to_col, cost)]
    out = []
    n_rows = cost.shape[0]
    # once k assignments are out, keep expanding while the heap top ties the
    # k-th cost so the lexicographic cut below is applied to all candidates
    while heap and (len(out) < k or heap[0][0] == out[k - 1].total_cost):
        total, r2c, sub = heapq.heappop(heap)
        out.append(Assignment(r2c, total))
        # Murty partition: child i forbids row i's current column while
        # forcing rows 0..i-1 to theirs; children are disjoint and cover
        # every other assignment of this subproblem.
        for i in range(n_rows):
            child = sub.copy()
            child[i, r2c[i]] = np.inf
            for j in range(i):
                keep = child[j, r2c[j]]
                child[j, :] = np.inf
                child[j, r2c[j]] = keep
            sol = _solve(child)
            if sol is not None:
                heapq.heappush(heap, (sol.total_cost, sol.row_to_col, child))
    out.sort(key=lambda a: (a.total_cost, a.row_to_col))
    return out if math.isinf(k) else out[: int(k)]


def _kbest_disjoint_rows(cost, finite_cols, k):
    """k-best when each row's finite columns are private to that row.

    Every combination of per-row choices is then feasible, so ranked
    assignments are the k smallest sums over independent option lists
    (cheap heap merge instead of repeated assignment solves).
    """
    options = [sorted((float(cost[r, c]), int(c)) for c in cols) for r, cols in enumerate(finite_cols)]
    n = len(options)

    def entry(ivec):
        total = 0.0
        r2c = []
        for r, i in enumerate(ivec):
            total += options[r][i][0]
            r2c.append(options[r][i][1])
        return (total, tuple(r2c), ivec)

    start = (0,) * n
    heap = [entry(start)]
    seen = {start}
    out = []
    while heap and (len(out) < k or heap[0][0] == out[k - 1].total_cost):
        total, r2c, ivec = heapq.heappop(heap)
        out.append(Assignment(r2c, total))
        for r in range(n):
            if ivec[r] + 1 < len(options[r]):
                nxt = ivec[:r] + (ivec[r] + 1,) + ivec[r + 1 :]
                if nxt not in seen:
                    seen.add(nxt)
                    heapq.heappush(heap, entry(nxt))
    out.sort(key=lambda a: (a.total_cost, a.row_to_col))
    return out if math.isinf(k) else out[: int(k)]
