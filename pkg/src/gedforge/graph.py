"""Node-labeled undirected graphs, BFS ordering, generation and JSON I/O."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal, Sequence

import numpy as np

from gedforge.rng import substream


class GraphFormatError(ValueError):
    """Base class for graph parse failures."""


class MalformedGraphError(GraphFormatError):
    pass


class DuplicateNodeError(GraphFormatError):
    pass


class DanglingEdgeError(GraphFormatError):
    pass


class SelfLoopError(GraphFormatError):
    pass


def _norm_edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected graph with dense node ids ``0..n-1`` and integer labels.

    ``edges`` holds each edge once as ``(u, v)`` with ``u < v``.
    """

    labels: tuple[int, ...]
    edges: frozenset[tuple[int, int]] = frozenset()
    num_labels: int = 0

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise MalformedGraphError("graph must have at least one node")
        if min(labels) < 0:
            raise MalformedGraphError("labels must be non-negative")
        n = len(labels)
        edges = set()
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise SelfLoopError(f"self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise DanglingEdgeError(f"edge ({u}, {v}) references a missing node")
            edges.add(_norm_edge(u, v))
        object.__setattr__(self, "edges", frozenset(edges))
        inferred = max(labels) + 1
        if self.num_labels == 0:
            object.__setattr__(self, "num_labels", inferred)
        elif self.num_labels < inferred:
            raise MalformedGraphError(
                f"num_labels={self.num_labels} but label {inferred - 1} present"
            )

    @property
    def n(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    @cached_property
    def neighbors(self) -> tuple[frozenset[int], ...]:
        nbrs: list[set[int]] = [set() for _ in range(self.n)]
        for u, v in self.edges:
            nbrs[u].add(v)
            nbrs[v].add(u)
        return tuple(frozenset(s) for s in nbrs)

    @cached_property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.neighbors)

    @cached_property
    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n), dtype=np.int8)
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1
        a.setflags(write=False)
        return a

    @cached_property
    def adjacency_bits(self) -> tuple[int, ...]:
        """Neighbor sets as integer bitmasks."""
        return tuple(sum(1 << j for j in s) for s in self.neighbors)

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.neighbors[u]

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)


@dataclass(frozen=True)
class NodeOrdering:
    """``permutation[rank] = node id``."""

    permutation: tuple[int, ...]

    def __post_init__(self):
        perm = tuple(int(x) for x in self.permutation)
        object.__setattr__(self, "permutation", perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"not a bijection on 0..{len(perm) - 1}: {perm}")

    def __len__(self) -> int:
        return len(self.permutation)

    def __iter__(self):
        return iter(self.permutation)

    def inverse(self) -> "NodeOrdering":
        inv = [0] * len(self.permutation)
        for rank, node in enumerate(self.permutation):
            inv[node] = rank
        return NodeOrdering(tuple(inv))

    @classmethod
    def identity(cls, n: int) -> "NodeOrdering":
        return cls(tuple(range(n)))


@dataclass(frozen=True)
class GraphPair:
    g1: LabeledGraph
    g2: LabeledGraph
    ground_truth_ged: int | None = None
    ground_truth_kind: Literal["exact", "ub"] | None = None


# -- serialization ---------------------------------------------------------


def graph_to_dict(g: LabeledGraph) -> dict:
    d = {
        "nodes": [{"id": i, "label": lab} for i, lab in enumerate(g.labels)],
        "edges": [[u, v] for u, v in g.sorted_edges()],
    }
    if g.num_labels != max(g.labels) + 1:
        d["num_labels"] = g.num_labels
    return d


def graph_from_dict(obj, num_labels: int | None = None) -> LabeledGraph:
    if not isinstance(obj, dict) or "nodes" not in obj:
        raise MalformedGraphError("graph object needs a 'nodes' list")
    nodes = obj["nodes"]
    edges = obj.get("edges", [])
    if not isinstance(nodes, list) or not isinstance(edges, list):
        raise MalformedGraphError("'nodes' and 'edges' must be lists")
    labels: dict[int, int] = {}
    for rec in nodes:
        try:
            nid, lab = rec["id"], rec["label"]
        except (TypeError, KeyError) as exc:
            raise MalformedGraphError(f"bad node record {rec!r}") from exc
        if not isinstance(nid, int) or not isinstance(lab, int) or isinstance(nid, bool):
            raise MalformedGraphError(f"node id and label must be integers: {rec!r}")
        if nid in labels:
            raise DuplicateNodeError(f"duplicate node id {nid}")
        labels[nid] = lab
    if sorted(labels) != list(range(len(labels))):
        raise MalformedGraphError("node ids must be dense 0..n-1")
    pairs = []
    seen = set()
    for e in edges:
        if not isinstance(e, (list, tuple)) or len(e) != 2:
            raise MalformedGraphError(f"bad edge {e!r}")
        u, v = e
        if not isinstance(u, int) or not isinstance(v, int):
            raise MalformedGraphError(f"edge endpoints must be integers: {e!r}")
        if u == v:
            raise SelfLoopError(f"self-loop on node {u}")
        if u not in labels or v not in labels:
            raise DanglingEdgeError(f"edge ({u}, {v}) references a missing node")
        key = _norm_edge(u, v)
        if key in seen:
            raise MalformedGraphError(f"multi-edge {key}")
        seen.add(key)
        pairs.append(key)
    if num_labels is None:
        num_labels = int(obj.get("num_labels", 0))
    return LabeledGraph(
        tuple(labels[i] for i in range(len(labels))), frozenset(pairs), num_labels
    )


def parse_graph(text: str, num_labels: int | None = None) -> LabeledGraph:
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedGraphError(f"invalid JSON: {exc}") from exc
    return graph_from_dict(obj, num_labels)


def serialize_graph(g: LabeledGraph) -> str:
    return json.dumps(graph_to_dict(g), separators=(",", ":"))


def load_dataset(path) -> list[LabeledGraph]:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, list):
        raise MalformedGraphError("dataset file must hold a JSON array of graphs")
    graphs = [graph_from_dict(obj) for obj in data]
    # one alphabet for the whole corpus
    width = max(g.num_labels for g in graphs)
    return [g if g.num_labels == width else LabeledGraph(g.labels, g.edges, width) for g in graphs]


def save_dataset(graphs: Sequence[LabeledGraph], path) -> None:
    with open(path, "w") as f:
        json.dump([graph_to_dict(g) for g in graphs], f, separators=(",", ":"))
        f.write("\n")


# -- ordering --------------------------------------------------------------


def bfs_keys(g: LabeledGraph) -> list[tuple[int, int, int]]:
    """Id-independent tie-break key per node: (degree, label, 2-round label hash).

    The hash is the rank of the node's 2-round neighborhood signature among all
    signatures of the graph, so it only depends on graph structure.
    """
    colors = [(g.labels[i], g.degrees[i]) for i in range(g.n)]
    for _ in range(2):
        sigs = [
            (colors[i], tuple(sorted(colors[j] for j in g.neighbors[i])))
            for i in range(g.n)
        ]
        rank = {s: r for r, s in enumerate(sorted(set(sigs)))}
        colors = [rank[s] for s in sigs]
    return [(g.degrees[i], g.labels[i], colors[i]) for i in range(g.n)]


def has_unique_keys(g: LabeledGraph) -> bool:
    keys = bfs_keys(g)
    return len(set(keys)) == len(keys)


def bfs_order(g: LabeledGraph) -> NodeOrdering:
    keys = bfs_keys(g)
    # components first, each rooted at its max-key node
    comp = [-1] * g.n
    comps: list[list[int]] = []
    for s in range(g.n):
        if comp[s] >= 0:
            continue
        members = [s]
        comp[s] = len(comps)
        k = 0
        while k < len(members):
            for v in g.neighbors[members[k]]:
                if comp[v] < 0:
                    comp[v] = len(comps)
                    members.append(v)
            k += 1
        comps.append(members)

    # ties among equal keys fall back to node id; only reachable when keys collide
    def sort_key(v):
        return (keys[v], -v)

    roots = sorted((max(m, key=sort_key) for m in comps), key=sort_key, reverse=True)
    order: list[int] = []
    seen = [False] * g.n
    for root in roots:
        seen[root] = True
        queue = [root]
        head = 0
        while head < len(queue):
            u = queue[head]
            head += 1
            children = sorted(
                (v for v in g.neighbors[u] if not seen[v]), key=sort_key, reverse=True
            )
            for v in children:
                seen[v] = True
                queue.append(v)
        order.extend(queue)
    return NodeOrdering(tuple(order))


def permute_graph(g: LabeledGraph, p: NodeOrdering | Sequence[int]) -> LabeledGraph:
    """Relabel node ids so that old node ``p[k]`` becomes new node ``k``."""
    if not isinstance(p, NodeOrdering):
        p = NodeOrdering(tuple(p))
    if len(p) != g.n:
        raise ValueError(f"ordering has {len(p)} entries for a {g.n}-node graph")
    new_id = p.inverse().permutation
    labels = tuple(g.labels[old] for old in p.permutation)
    edges = frozenset(_norm_edge(new_id[u], new_id[v]) for u, v in g.edges)
    return LabeledGraph(labels, edges, g.num_labels)


# -- generation ------------------------------------------------------------


def generate_graph(
    n: int,
    edge_prob: float,
    labels: int,
    seed: int | np.random.Generator,
    connected: bool = False,
) -> LabeledGraph:
    """Erdos-Renyi style random graph with uniform labels.

    With ``connected=True`` a random spanning tree is laid down first and the
    remaining pairs are added with probability ``edge_prob``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0.0 <= edge_prob <= 1.0:
        raise ValueError("edge_prob must lie in [0, 1]")
    if labels < 1:
        raise ValueError("labels must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    node_labels = tuple(int(x) for x in rng.integers(0, labels, size=n))
    edges: set[tuple[int, int]] = set()
    if connected and n > 1:
        order = rng.permutation(n)
        for k in range(1, n):
            parent = order[int(rng.integers(0, k))]
            edges.add(_norm_edge(int(order[k]), int(parent)))
    draws = rng.random(n * (n - 1) // 2)
    k = 0
    for u in range(n):
        for v in range(u + 1, n):
            if draws[k] < edge_prob:
                edges.add((u, v))
            k += 1
    return LabeledGraph(node_labels, frozenset(edges), labels)


@dataclass
class CorpusSpec:
    num_graphs: int = 300
    min_nodes: int = 5
    max_nodes: int = 10
    labels: int = 3
    edge_prob: float = 0.2
    connected: bool = True
    duplicates: int = 0
    extra: dict = field(default_factory=dict)


def generate_corpus(spec: CorpusSpec, seed: int) -> list[LabeledGraph]:
    """Seeded corpus; ``duplicates`` appends relabeled copies of earlier graphs."""
    rng = substream(seed, "generation")
    graphs = []
    base = spec.num_graphs - spec.duplicates
    for _ in range(base):
        n = int(rng.integers(spec.min_nodes, spec.max_nodes + 1))
        graphs.append(generate_graph(n, spec.edge_prob, spec.labels, rng, spec.connected))
    for _ in range(spec.duplicates):
        src = graphs[int(rng.integers(0, base))]
        graphs.append(permute_graph(src, rng.permutation(src.n).tolist()))
    return graphs


def split_indices(
    n: int, seed: int, fractions: Iterable[float] = (0.6, 0.2, 0.2)
) -> dict[str, list[int]]:
    fr = tuple(fractions)
    if len(fr) != 3 or abs(sum(fr) - 1.0) > 1e-9 or min(fr) < 0:
        raise ValueError(f"split fractions must be three non-negatives summing to 1: {fr}")
    perm = substream(seed, "split").permutation(n).tolist()
    n_train = int(round(fr[0] * n))
    n_val = int(round(fr[1] * n))
    return {
        "train": sorted(perm[:n_train]),
        "val": sorted(perm[n_train : n_train + n_val]),
        "test": sorted(perm[n_train + n_val :]),
    }
