"""Group decoding as rectangular linear sum assignment.

Within a candidate group, each blank gets a probability row over the
shared candidate list; decoding picks pairwise-distinct candidates that
maximize total log-likelihood, i.e. minimize total cost with
cost = -log p.  Solved by the Kuhn-Munkres (Hungarian) algorithm in its
potentials / shortest-augmenting-path form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_FLOOR = 1e-300


class InfeasibleError(ValueError):
    """More blanks than candidates, or non-finite costs."""


@dataclass
class Assignment:
    columns: list        # chosen candidate column per blank
    total_cost: float


def solve_assignment(cost) -> Assignment:
    """Minimum-cost one-to-one assignment of m rows to n >= m columns.

    Rectangular inputs are squared up with constant-cost dummy rows,
    which shift every completion equally and cannot distort the real
    rows' optimum.  The optimal total cost is unique even when the
    minimizing assignment is not; among ties the algorithm's scan order
    decides deterministically.
    """
    Z = np.asarray(cost, dtype=np.float64)
    if Z.ndim != 2 or Z.size == 0:
        raise InfeasibleError(f"cost matrix must be 2-D and non-empty, got {Z.shape}")
    if not np.isfinite(Z).all():
        raise InfeasibleError("cost matrix contains non-finite entries")
    m, n = Z.shape
    if m > n:
        raise InfeasibleError(f"{m} blanks but only {n} candidates")
    if m < n:
        pad = np.full((n - m, n), 0.0)
        Z = np.vstack([Z, pad])

    cols = _kuhn_munkres(Z)
    chosen = cols[:m]
    total = float(np.asarray(cost, dtype=np.float64)[np.arange(m), chosen].sum())
    return Assignment(columns=[int(c) for c in chosen], total_cost=total)


def _kuhn_munkres(a):
    """Square min-cost assignment via row/column potentials and shortest
    augmenting paths; O(n^3).  Returns the column matched to each row."""
    n = a.shape[0]
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)          # p[j]: row matched to column j
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = -1
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = a[i0 - 1, j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    cols = np.zeros(n, dtype=np.int64)
    for j in range(1, n + 1):
        cols[p[j] - 1] = j - 1
    return cols


def brute_force_assignment(cost) -> Assignment:
    """Exhaustive oracle over all injections of rows into columns."""
    from itertools import permutations

    Z = np.asarray(cost, dtype=np.float64)
    m, n = Z.shape
    if m > n:
        raise InfeasibleError(f"{m} blanks but only {n} candidates")
    best, best_cols = np.inf, None
    rows = np.arange(m)
    for cols in permutations(range(n), m):
        total = Z[rows, list(cols)].sum()
        if total < best:
            best, best_cols = total, cols
    return Assignment(columns=list(best_cols), total_cost=float(best))


def decode_group(prob_rows):
    """Assignment decoding of one group.

    prob_rows: (m, n) per-blank probability rows over the shared candidate
    list.  Returns (choices, total log-likelihood of the chosen filling).
    """
    P = np.asarray(prob_rows, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"expected a matrix of probability rows, got {P.shape}")
    logp = np.log(np.maximum(P, PROB_FLOOR))
    result = solve_assignment(-logp)
    return result.columns, -result.total_cost
