"""Linear assignment, bipartite GED bounds, Hausdorff GED, EMD transport and
the optimal assignment kernel."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from gedforge.editpath import EPS, GedResult, edit_path_from_mapping
from gedforge.graph import LabeledGraph


@dataclass(frozen=True)
class Assignment:
    perm: tuple[int, ...]  # row i -> column perm[i]
    total_cost: float


def _as_square(cost) -> np.ndarray:
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("cost matrix must be finite (use a large sentinel instead of inf)")
    return c


def _assignment(c: np.ndarray, perm) -> Assignment:
    perm = tuple(int(j) for j in perm)
    total = math.fsum(c[i, j] for i, j in enumerate(perm))
    return Assignment(perm, total)


def solve_lap_hungarian(cost) -> Assignment:
    """Kuhn-Munkres with row/column potentials, O(n^3).

    Rows are inserted one at a time; each insertion grows an alternating tree
    over columns until a free column is reached, adjusting potentials by the
    smallest slack on the way.
    """
    c = _as_square(cost)
    n = c.shape[0]
    if n == 0:
        return Assignment((), 0.0)
    # 1-based columns; column 0 is the virtual root of the alternating tree
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    row_of = np.zeros(n + 1, dtype=np.int64)  # column -> matched row (1-based), 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        row_of[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = row_of[j0]
            free = ~used
            free[0] = False
            cols = np.flatnonzero(free)
            cur = c[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            k = int(np.argmin(minv[cols]))
            j1 = int(cols[k])
            delta = minv[j1]
            tree = np.flatnonzero(used)
            u[row_of[tree]] += delta
            v[tree] -= delta
            minv[cols] -= delta
            j0 = j1
            if row_of[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            row_of[j0] = row_of[j1]
            j0 = j1
    perm = [0] * n
    for j in range(1, n + 1):
        perm[row_of[j] - 1] = j - 1
    return _assignment(c, perm)


def solve_lap_jv(cost) -> Assignment:
    """Jonker-Volgenant: column reduction, reduction transfer, augmenting row
    reduction, then Dijkstra-style shortest augmenting paths."""
    c = _as_square(cost)
    n = c.shape[0]
    if n == 0:
        return Assignment((), 0.0)
    if n == 1:
        return _assignment(c, [0])
    x = np.full(n, -1, dtype=np.int64)  # row -> col
    y = np.full(n, -1, dtype=np.int64)  # col -> row

    # column reduction
    v = c.min(axis=0).copy()
    argmin_rows = c.argmin(axis=0)
    unique = np.ones(n, dtype=bool)
    for j in range(n - 1, -1, -1):
        i = argmin_rows[j]
        if x[i] < 0:
            x[i] = j
            y[j] = i
        else:
            unique[i] = False
    free_rows = []
    for i in range(n):
        if x[i] < 0:
            free_rows.append(i)
        elif unique[i]:
            # reduction transfer
            j = x[i]
            red = c[i] - v
            red[j] = np.inf
            v[j] -= red.min()

    # augmenting row reduction, two passes
    for _ in range(2):
        if not free_rows:
            break
        free_rows = _augmenting_row_reduction(c, free_rows, x, y, v)

    for f in free_rows:
        j, pred = _shortest_path(c, f, y, v)
        while True:
            i = pred[j]
            y[j] = i
            x[i], j = j, x[i]
            if i == f:
                break
    return _assignment(c, x)


def _augmenting_row_reduction(c, free_rows, x, y, v):
    n = c.shape[0]
    queue = list(free_rows)
    current = 0
    new_free = []
    rr_cnt = 0
    while current < len(queue):
        rr_cnt += 1
        free_i = queue[current]
        current += 1
        h = c[free_i] - v
        j1 = int(np.argmin(h))
        v1 = h[j1]
        h[j1] = np.inf
        j2 = int(np.argmin(h))
        v2 = h[j2]
        i0 = y[j1]
        v1_new = v[j1] - (v2 - v1)
        v1_lowers = v1_new < v[j1]
        if rr_cnt < current * n:
            if v1_lowers:
                v[j1] = v1_new
            elif i0 >= 0:
                j1 = j2
                i0 = y[j2]
            if i0 >= 0:
                if v1_lowers:
                    current -= 1
                    queue[current] = i0
                else:
                    new_free.append(i0)
        elif i0 >= 0:
            new_free.append(i0)
        x[free_i] = j1
        y[j1] = free_i
        if i0 >= 0 and x[i0] == j1:
            x[i0] = -1
    return new_free


def _shortest_path(c, start, y, v):
    """Dijkstra over reduced costs from free row ``start`` to a free column.

    Updates the column potentials of settled columns and returns the free
    column reached together with the predecessor rows.
    """
    n = c.shape[0]
    d = c[start] - v
    pred = np.full(n, start, dtype=np.int64)
    settled = np.zeros(n, dtype=bool)
    ready: list[int] = []
    while True:
        open_cols = np.flatnonzero(~settled)
        mind = d[open_cols].min()
        frontier = open_cols[d[open_cols] == mind]
        free = frontier[y[frontier] < 0]
        if free.size:
            final_j = int(free[0])
            break
        # settle the whole minimum level, relaxing from each matched row
        scan = list(frontier)
        settled[frontier] = True
        final_j = -1
        while scan:
            j = scan.pop()
            ready.append(j)
            i = y[j]
            h = c[i, j] - v[j] - mind
            rest = np.flatnonzero(~settled)
            cred = c[i, rest] - v[rest] - h
            better = cred < d[rest]
            upd = rest[better]
            d[upd] = cred[better]
            pred[upd] = i
            tied = upd[d[upd] == mind]
            if tied.size:
                hit = tied[y[tied] < 0]
                if hit.size:
                    final_j = int(hit[0])
                    break
                settled[tied] = True
                scan.extend(tied.tolist())
        if final_j >= 0:
            break
    mind = d[final_j]
    for j in ready:
        v[j] += d[j] - mind
    return final_j, pred


LAP_SOLVERS = {"hungarian": solve_lap_hungarian, "jv": solve_lap_jv}

CostModel = Literal["augmented", "unit"]


def build_ged_cost_matrix(
    g1: LabeledGraph, g2: LabeledGraph, cost_model: CostModel = "unit"
) -> np.ndarray:
    """(n1+n2) x (n1+n2) node edit cost matrix with substitution, deletion,
    insertion and eps-eps blocks; forbidden cells carry a finite sentinel.

    ``unit`` uses unit label costs only. ``augmented`` adds the optimal cost
    of matching the two nodes' incident edges, which for unlabeled edges is
    the degree difference, and charges deletions/insertions 1 + degree.
    """
    n1, n2 = g1.n, g2.n
    lab1 = np.array(g1.labels)[:, None]
    lab2 = np.array(g2.labels)[None, :]
    sub = (lab1 != lab2).astype(np.float64)
    dele = np.ones(n1)
    ins = np.ones(n2)
    if cost_model == "augmented":
        d1 = np.array(g1.degrees, dtype=np.float64)
        d2 = np.array(g2.degrees, dtype=np.float64)
        sub = sub + np.abs(d1[:, None] - d2[None, :])
        dele = dele + d1
        ins = ins + d2
    elif cost_model != "unit":
        raise ValueError(f"unknown cost model {cost_model!r}")
    n = n1 + n2
    finite_max = max(sub.max(initial=0.0), dele.max(initial=0.0), ins.max(initial=0.0))
    sentinel = n * finite_max + 1.0
    c = np.zeros((n, n))
    c[:n1, :n2] = sub
    c[:n1, n2:] = sentinel
    c[n1:, :n2] = sentinel
    c[np.arange(n1), n2 + np.arange(n1)] = dele
    c[n1 + np.arange(n2), np.arange(n2)] = ins
    return c


def ged_bipartite(
    g1: LabeledGraph,
    g2: LabeledGraph,
    solver: str = "hungarian",
    cost_model: CostModel = "augmented",
) -> GedResult:
    """Upper bound from a node assignment: the cost of the edit path it induces."""
    c = build_ged_cost_matrix(g1, g2, cost_model)
    a = LAP_SOLVERS[solver](c)
    mapping = tuple(j if j < g2.n else EPS for j in a.perm[: g1.n])
    path = edit_path_from_mapping(g1, g2, mapping)
    return GedResult(
        len(path), "upper", path, mapping, method=solver, extra={"lap_cost": a.total_cost}
    )


def ged_hed(g1: LabeledGraph, g2: LabeledGraph) -> GedResult:
    """Hausdorff edit distance, a lower bound on GED in O((n1+n2)^2).

    Every node independently picks its cheapest option: deletion/insertion
    (1 + half its degree, edges being shared by two endpoints) or half of a
    substitution. A substitution costs the label mismatch plus half the degree
    difference, the least edge work any mapping of the two nodes implies.
    """
    lab1 = np.array(g1.labels)[:, None]
    lab2 = np.array(g2.labels)[None, :]
    d1 = np.array(g1.degrees, dtype=np.float64)
    d2 = np.array(g2.degrees, dtype=np.float64)
    sub = (lab1 != lab2) + np.abs(d1[:, None] - d2[None, :]) / 2.0
    side1 = np.minimum(1.0 + d1 / 2.0, sub.min(axis=1) / 2.0)
    side2 = np.minimum(1.0 + d2 / 2.0, sub.min(axis=0) / 2.0)
    value = math.fsum(side1) + math.fsum(side2)
    return GedResult(value, "lower", method="hed")


# -- transportation (EMD) --------------------------------------------------


@dataclass(frozen=True)
class FlowMatrix:
    flows: np.ndarray  # n1 x n2

    def check(self, tol: float = 1e-9) -> None:
        n1, n2 = self.flows.shape
        if (self.flows < -tol).any():
            raise AssertionError("negative flow")
        if np.abs(self.flows.sum(axis=1) - 1.0 / n1).max() > tol:
            raise AssertionError("row marginals violated")
        if np.abs(self.flows.sum(axis=0) - 1.0 / n2).max() > tol:
            raise AssertionError("column marginals violated")


def pairwise_l2(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sqrt(((x[:, None, :] - y[None, :, :]) ** 2).sum(axis=-1))


def solve_transportation(x, y) -> tuple[FlowMatrix, float]:
    """Min-cost transport of uniform mass between two embedding sets.

    Scaling all marginals by n1*n2 makes every supply (n2 per row) and demand
    (n1 per column) integral, so successive shortest paths on the bipartite
    residual network terminate with an exact integral flow.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"embedding dimensions differ: {x.shape[1]} vs {y.shape[1]}")
    n1, n2 = x.shape[0], y.shape[0]
    if n1 < 1 or n2 < 1:
        raise ValueError("both sets need at least one embedding")
    dist = pairwise_l2(x, y)
    flow = _min_cost_flow(dist, [n2] * n1, [n1] * n2)
    scale = n1 * n2
    cost = math.fsum(flow[i, j] * dist[i, j] for i in range(n1) for j in range(n2)) / scale
    return FlowMatrix(flow / scale), cost


def _min_cost_flow(cost: np.ndarray, supply: list[int], demand: list[int]) -> np.ndarray:
    """Successive shortest paths (Bellman-Ford) on a dense bipartite network."""
    n1, n2 = cost.shape
    flow = np.zeros((n1, n2), dtype=np.int64)
    left = list(supply)
    need = list(demand)
    tol = 1e-12
    while any(left):
        # labels on rows (0..n1-1) and columns (n1..n1+n2-1)
        dist = np.full(n1 + n2, np.inf)
        pred = [-1] * (n1 + n2)
        for i in range(n1):
            if left[i] > 0:
                dist[i] = 0.0
        changed = True
        while changed:
            changed = False
            # forward arcs row -> column, unbounded capacity
            for i in range(n1):
                if dist[i] == np.inf:
                    continue
                cand = dist[i] + cost[i]
                better = cand < dist[n1:] - tol
                if better.any():
                    for j in np.flatnonzero(better):
                        dist[n1 + j] = cand[j]
                        pred[n1 + j] = i
                    changed = True
            # backward arcs column -> row where flow can be undone
            for j in range(n2):
                dj = dist[n1 + j]
                if dj == np.inf:
                    continue
                for i in np.flatnonzero(flow[:, j] > 0):
                    cand = dj - cost[i, j]
                    if cand < dist[i] - tol:
                        dist[i] = cand
                        pred[i] = n1 + j
                        changed = True
        sinks = [j for j in range(n2) if need[j] > 0 and dist[n1 + j] < np.inf]
        j_end = min(sinks, key=lambda j: (dist[n1 + j], j))
        # walk back to a source row, collecting the bottleneck
        path = []
        node = n1 + j_end
        while True:
            prev = pred[node]
            if prev == -1:
                break
            path.append((prev, node))
            node = prev
        src = node
        amount = min(left[src], need[j_end])
        for a, b in path:
            if a >= n1:  # backward arc column a -> row b
                amount = min(amount, flow[b, a - n1])
        for a, b in path:
            if a < n1:
                flow[a, b - n1] += amount
            else:
                flow[b, a - n1] -= amount
        left[src] -= amount
        need[j_end] -= amount
    return flow


# -- optimal assignment kernel ---------------------------------------------


def assignment_kernel(
    xs, ys, base_kernel: Callable[[object, object], float]
) -> float:
    """max over bijections of summed base-kernel similarity; the smaller side
    is padded with objects of zero similarity to everything."""
    xs, ys = list(xs), list(ys)
    n = max(len(xs), len(ys))
    if n == 0:
        return 0.0
    sim = np.zeros((n, n))
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            sim[i, j] = base_kernel(a, b)
    a = solve_lap_hungarian(-sim)
    return math.fsum(sim[i, j] for i, j in enumerate(a.perm))


def lap_bruteforce(cost) -> Assignment:
    """Factorial enumeration, for cross-checking only."""
    c = _as_square(cost)
    n = c.shape[0]
    best = None
    for perm in itertools.permutations(range(n)):
        total = math.fsum(c[i, j] for i, j in enumerate(perm))
        if best is None or total < best.total_cost:
            best = Assignment(perm, total)
    return best if best is not None else Assignment((), 0.0)
