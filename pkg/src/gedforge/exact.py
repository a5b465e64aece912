"""Exact GED (exhaustive oracle, A*) and the A*-beam upper bound."""

from __future__ import annotations

import heapq
import itertools

import numpy as np

from gedforge.editpath import EPS, GedResult, edit_path_from_mapping
from gedforge.graph import LabeledGraph, bfs_order


class SizeGuardError(ValueError):
    pass


class SearchBudgetExceeded(RuntimeError):
    def __init__(self, expanded: int):
        super().__init__(f"search budget exhausted after {expanded} expansions")
        self.expanded = expanded


BRUTEFORCE_MAX_TOTAL = 12


def ged_bruteforce(g1: LabeledGraph, g2: LabeledGraph) -> GedResult:
    """Enumerate every injective partial map V1 -> V2 + {eps}."""
    n1, n2 = g1.n, g2.n
    if n1 + n2 > BRUTEFORCE_MAX_TOTAL:
        raise SizeGuardError(f"|G1|+|G2| = {n1 + n2} exceeds {BRUTEFORCE_MAX_TOTAL}")
    # column n2 encodes eps
    maps = np.array(list(itertools.product(range(n2 + 1), repeat=n1)), dtype=np.int64)
    maps = maps.reshape(-1, n1)
    for v in range(n2):
        maps = maps[(maps == v).sum(axis=1) <= 1]
    real = maps < n2
    n_mapped = real.sum(axis=1)
    lab1 = np.array(g1.labels)
    lab2 = np.append(np.array(g2.labels), -1)
    relabels = ((lab2[maps] != lab1[None, :]) & real).sum(axis=1)
    node_cost = (n1 - n_mapped) + (n2 - n_mapped) + relabels
    a2 = np.zeros((n2 + 1, n2 + 1), dtype=np.int64)
    a2[:n2, :n2] = g2.adjacency
    kept = np.zeros(len(maps), dtype=np.int64)
    for u, w in g1.edges:
        kept += a2[maps[:, u], maps[:, w]]
    cost = node_cost + len(g1.edges) + len(g2.edges) - 2 * kept
    best = int(np.argmin(cost))
    mapping = tuple(int(v) if v < n2 else EPS for v in maps[best])
    path = edit_path_from_mapping(g1, g2, mapping)
    assert len(path) == int(cost[best])
    return GedResult(len(path), "exact", path, mapping, expanded=len(maps), method="bruteforce")


class _Search:
    """Shared state-space machinery for A* and beam search.

    g1's nodes are decided one at a time in BFS order; each is mapped to an
    unused node of g2 or deleted. Bitmasks index g1 by BFS rank and g2 by id.
    """

    def __init__(self, g1: LabeledGraph, g2: LabeledGraph):
        self.g1, self.g2 = g1, g2
        self.n1, self.n2 = g1.n, g2.n
        self.order = bfs_order(g1).permutation
        rank = [0] * g1.n
        for r, u in enumerate(self.order):
            rank[u] = r
        self.adj1 = [sum(1 << rank[w] for w in g1.neighbors[u]) for u in self.order]
        self.lab1 = [g1.labels[u] for u in self.order]
        self.adj2 = list(g2.adjacency_bits)
        self.lab2 = list(g2.labels)
        n_labels = max(g1.num_labels, g2.num_labels)
        self.n_labels = n_labels
        # label counts of ranks >= k
        self.suffix_counts = [[0] * n_labels for _ in range(self.n1 + 1)]
        for k in range(self.n1 - 1, -1, -1):
            row = list(self.suffix_counts[k + 1])
            row[self.lab1[k]] += 1
            self.suffix_counts[k] = row
        # edges among ranks >= k
        self.suffix_edges = [0] * (self.n1 + 1)
        for k in range(self.n1 - 1, -1, -1):
            later = (self.adj1[k] >> (k + 1)).bit_count()
            self.suffix_edges[k] = self.suffix_edges[k + 1] + later
        self.label_masks2 = [0] * n_labels
        for v, lab in enumerate(self.lab2):
            self.label_masks2[lab] |= 1 << v
        self.full2 = (1 << self.n2) - 1

    def root(self):
        # (g, mapping, used mask)
        return (0, (), 0)

    def children(self, state):
        """Return (g, h, child_state) for every extension of ``state``.

        h is evaluated incrementally: everything shared by the siblings is
        computed once, each child then costs O(1). ``heuristic`` is the
        from-scratch reference.
        """
        g, mapping, used = state
        k = len(mapping)
        adj1, adj2, lab2 = self.adj1, self.adj2, self.lab2
        prev_edges = adj1[k] & ((1 << k) - 1)
        n_prev_edges = prev_edges.bit_count()
        rem1 = ((1 << self.n1) - 1) & ~((1 << (k + 1)) - 1)
        rem2 = self.full2 & ~used
        # label part: counts of g1 ranks > k against g2 leftovers
        counts1 = self.suffix_counts[k + 1]
        c2 = [(m & rem2).bit_count() for m in self.label_masks2]
        common = 0
        for c1, cc in zip(counts1, c2):
            common += c1 if c1 < cc else cc
        n_rem1 = self.n1 - k - 1
        n_rem2 = rem2.bit_count()
        # edge classes of already decided nodes; a child mapping to v removes v
        # from rem2, which moves each d2 adjacent to v down by one
        edge_base = 0
        grow = 0  # images whose |d1 - d2| grows if v leaves rem2
        shrink = 0
        mapped_nbrs = 0
        for i in range(k):
            t = mapping[i]
            d1 = (adj1[i] & rem1).bit_count()
            if t == EPS:
                edge_base += d1
                continue
            d2 = (adj2[t] & rem2).bit_count()
            if d1 >= d2:
                edge_base += d1 - d2
                grow |= 1 << t
            else:
                edge_base += d2 - d1
                shrink |= 1 << t
            if (prev_edges >> i) & 1:
                mapped_nbrs |= 1 << t
        e2_parent = 0
        bits = rem2
        while bits:
            low = bits & -bits
            e2_parent += (adj2[low.bit_length() - 1] & rem2).bit_count()
            bits ^= low
        e2_parent //= 2
        e1 = self.suffix_edges[k + 1]
        d1_new = (adj1[k] & rem1).bit_count()
        lab = self.lab1[k]
        last = k + 1 == self.n1
        out = []
        for v in range(self.n2):
            if (used >> v) & 1:
                continue
            av = adj2[v]
            step = (lab != lab2[v]) + n_prev_edges + (av & used).bit_count()
            step -= 2 * (mapped_nbrs & av).bit_count()
            lv = lab2[v]
            h = max(n_rem1, n_rem2 - 1) - common + (c2[lv] <= counts1[lv])
            h += edge_base + (av & grow).bit_count() - (av & shrink).bit_count()
            d2_new = (av & rem2).bit_count()
            h += abs(d1_new - d2_new)
            e2 = e2_parent - d2_new
            h += abs(e1 - e2)
            out.append(self._child(g + step, h, mapping + (v,), used | (1 << v), last))
        h = max(n_rem1, n_rem2) - common + edge_base + d1_new + abs(e1 - e2_parent)
        out.append(self._child(g + 1 + n_prev_edges, h, mapping + (EPS,), used, last))
        return out

    @staticmethod
    def _child(g, h, mapping, used, last):
        if last:
            # with every g1 node decided h is exactly the cost of inserting the rest
            return (g + h, 0, (g + h, mapping, used))
        return (g, h, (g, mapping, used))

    def heuristic(self, state) -> int:
        """Admissible lower bound on the cost still to pay from ``state``.

        Node part: label-multiset deficit of the undecided nodes. Edge part:
        undecided edges split into disjoint classes that can only match each
        other (edges hanging off each decided node, and edges among undecided
        nodes); each class costs at least its size difference.
        """
        _, mapping, used = state
        k = len(mapping)
        rem2 = self.full2 & ~used
        n_rem1 = self.n1 - k
        n_rem2 = rem2.bit_count()
        counts1 = self.suffix_counts[k]
        common = 0
        for lab in range(self.n_labels):
            c2 = (self.label_masks2[lab] & rem2).bit_count()
            c1 = counts1[lab]
            common += c1 if c1 < c2 else c2
        h = (n_rem1 if n_rem1 > n_rem2 else n_rem2) - common
        rem1 = ((1 << self.n1) - 1) & ~((1 << k) - 1)
        adj1, adj2 = self.adj1, self.adj2
        for i in range(k):
            d1 = (adj1[i] & rem1).bit_count()
            t = mapping[i]
            d2 = (adj2[t] & rem2).bit_count() if t != EPS else 0
            h += d1 - d2 if d1 > d2 else d2 - d1
        e2 = 0
        bits = rem2
        while bits:
            low = bits & -bits
            e2 += (adj2[low.bit_length() - 1] & rem2).bit_count()
            bits ^= low
        e2 //= 2
        e1 = self.suffix_edges[k]
        h += e1 - e2 if e1 > e2 else e2 - e1
        return h

    def to_result(self, state, bound, expanded, method) -> GedResult:
        g, mapping, _ = state
        by_id = [EPS] * self.n1
        for r, t in enumerate(mapping):
            by_id[self.order[r]] = t
        mapping = tuple(by_id)
        path = edit_path_from_mapping(self.g1, self.g2, mapping)
        assert len(path) == g, (len(path), g)
        return GedResult(g, bound, path, mapping, expanded=expanded, method=method)


def ged_astar(
    g1: LabeledGraph,
    g2: LabeledGraph,
    max_nodes: int | None = 10,
    max_expanded: int | None = 2_000_000,
    upper_bound: int | None = None,
    debug: bool = False,
) -> GedResult:
    """Exact GED by A* over partial node mappings.

    ``upper_bound`` (any known edit-path cost) prunes states whose f exceeds
    it; it never changes the answer. With ``debug`` every expanded state is
    checked for g + h <= final distance.
    """
    if max_nodes is not None and max(g1.n, g2.n) > max_nodes:
        raise SizeGuardError(f"max(|G1|, |G2|) = {max(g1.n, g2.n)} exceeds {max_nodes}")
    if g1.n > g2.n:
        # branching over the smaller graph's nodes expands about half as many states
        flipped = ged_astar(g2, g1, None, max_expanded, upper_bound, debug)
        mapping = [EPS] * g1.n
        for v, u in enumerate(flipped.mapping):
            if u != EPS:
                mapping[u] = v
        flipped.mapping = tuple(mapping)
        flipped.edit_path = edit_path_from_mapping(g1, g2, flipped.mapping)
        assert len(flipped.edit_path) == flipped.distance
        return flipped
    search = _Search(g1, g2)
    n1 = search.n1
    tick = itertools.count()
    root = search.root()
    heap = [(search.heuristic(root), 0, next(tick), root)]
    expanded = 0
    max_f = 0
    limit = upper_bound if upper_bound is not None else float("inf")
    while heap:
        f, neg_g, _, state = heapq.heappop(heap)
        if len(state[1]) == n1:
            result = search.to_result(state, "exact", expanded, "astar")
            if debug and max_f > result.distance:
                raise AssertionError(f"inadmissible heuristic: f={max_f} > {result.distance}")
            return result
        expanded += 1
        if max_expanded is not None and expanded > max_expanded:
            raise SearchBudgetExceeded(expanded)
        max_f = max(max_f, f)
        for g, h, child in search.children(state):
            if g + h <= limit:
                heapq.heappush(heap, (g + h, -g, next(tick), child))
    raise AssertionError("search space exhausted without a complete mapping")


def ged_beam(g1: LabeledGraph, g2: LabeledGraph, width: int | None = 100) -> GedResult:
    """A*-beamsearch: keep the ``width`` best states per depth (None = all)."""
    if width is not None and width < 1:
        raise ValueError("beam width must be >= 1")
    search = _Search(g1, g2)
    level = [(search.heuristic(search.root()), 0, search.root())]
    expanded = 0
    for _ in range(search.n1):
        nxt = []
        for _, _, state in level:
            expanded += 1
            for g, h, child in search.children(state):
                nxt.append((g + h, -g, child))
        # stable sort keeps generation order among exact ties
        nxt.sort(key=lambda t: (t[0], t[1]))
        level = nxt if width is None else nxt[:width]
    return search.to_result(level[0][2], "upper", expanded, f"beam:{width}")
