"""Minimum-cost one-to-one assignment (Hungarian / Kuhn-Munkres).

``assign`` solves the rectangular problem by padding to a square matrix with
zero-cost dummy rows or columns, then selects, among all optimal assignments,
the lexicographically smallest one by predicted index. Ties are resolved on the
equality subgraph of the optimal dual potentials: every optimal assignment uses
only tight edges, so a greedy pick with a perfect-matching feasibility check
yields the canonical optimum. An optional secondary cost is minimized over the
same subgraph before the lexicographic pick.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

# Reduced costs below this are treated as tight. Costs live in [0, 1].
TIGHT_TOL = 1e-9


@dataclass(frozen=True)
class Assignment:
    pairs: list[tuple[int, int]] = field(default_factory=list)
    total_cost: float = 0.0


def _hungarian(cost: list[list[float]]) -> tuple[list[float], list[float], list[int]]:
    """Square Hungarian with potentials. Returns (u, v, col_for_row)."""
    n = len(cost)
    inf = math.inf
    # 1-indexed internals; index 0 is the virtual start row/column.
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
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
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col_for_row = [0] * n
    for j in range(1, n + 1):
        col_for_row[p[j] - 1] = j - 1
    return u[1:], v[1:], col_for_row


def _has_perfect_matching(adj: list[list[int]], rows: list[int], cols_free: set[int]) -> bool:
    match_col: dict[int, int] = {}

    def augment(r: int, seen: set[int]) -> bool:
        for c in adj[r]:
            if c in cols_free and c not in seen:
                seen.add(c)
                if c not in match_col or augment(match_col[c], seen):
                    match_col[c] = r
                    return True
        return False

    return all(augment(r, set()) for r in rows)


def _tight_adjacency(square: list[list[float]], allowed: list[list[int]] | None) -> list[list[int]]:
    u, v, _ = _hungarian(square)
    n = len(square)
    cols = allowed or [list(range(n))] * n
    return [[j for j in cols[i] if square[i][j] - u[i] - v[j] <= TIGHT_TOL] for i in range(n)]


def assign(
    cost: Sequence[Sequence[float]],
    secondary: Sequence[Sequence[float]] | None = None,
) -> Assignment:
    """Optimal assignment covering the smaller side of a rectangular cost matrix.

    Among minimum-cost assignments, ``secondary`` (same shape, optional) is
    minimized next; remaining ties go to the lexicographically smallest pair
    list. Pairs are returned sorted by row (predicted) index.
    """
    n_rows = len(cost)
    n_cols = len(cost[0]) if n_rows else 0
    if any(len(row) != n_cols for row in cost):
        raise ValueError("cost matrix must be rectangular")
    if n_rows == 0 or n_cols == 0:
        return Assignment([], 0.0)
    for row in cost:
        for c in row:
            if not math.isfinite(c):
                raise ValueError("cost matrix entries must be finite")

    n = max(n_rows, n_cols)

    def pad(m: Sequence[Sequence[float]]) -> list[list[float]]:
        return [
            [float(m[i][j]) if i < n_rows and j < n_cols else 0.0 for j in range(n)]
            for i in range(n)
        ]

    adj = _tight_adjacency(pad(cost), None)
    if secondary is not None:
        # Re-optimize over the optimal face only: non-tight edges are priced out.
        sec = pad(secondary)
        big = 1.0 + sum(abs(x) for row in sec for x in row)
        tight = [set(a) for a in adj]
        restricted = [[sec[i][j] if j in tight[i] else big for j in range(n)] for i in range(n)]
        adj = _tight_adjacency(restricted, adj)

    free_cols = set(range(n))
    remaining = list(range(n))
    chosen: dict[int, int] = {}
    # Greedy on real rows first, trying real columns in order, then a dummy.
    for i in range(n):
        remaining.remove(i)
        options = sorted(j for j in adj[i] if j in free_cols)
        real = [j for j in options if j < n_cols]
        dummy = [j for j in options if j >= n_cols][:1]
        for j in real + dummy:
            free_cols.discard(j)
            if _has_perfect_matching(adj, remaining, free_cols):
                chosen[i] = j
                break
            free_cols.add(j)
        else:  # pragma: no cover - duals guarantee a tight perfect matching
            raise RuntimeError("no tight perfect matching; numerical breakdown")

    pairs = sorted((i, j) for i, j in chosen.items() if i < n_rows and j < n_cols)
    total = math.fsum(float(cost[i][j]) for i, j in pairs)
    return Assignment(pairs, total)
