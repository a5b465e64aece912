"""Edit operations, node mappings and GED result records."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

from gedforge.graph import LabeledGraph

EPS = -1  # "maps to nothing" marker in node mappings

Bound = Literal["exact", "upper", "lower"]


class EditOp(NamedTuple):
    """One unit-cost edit.

    ``relabel`` (u, label), ``delete_node`` (u,), ``delete_edge`` (u, w) use g1
    ids; ``insert_node`` (v, label) and ``insert_edge`` (v, y) use g2 ids.
    """

    kind: Literal["relabel", "delete_node", "insert_node", "delete_edge", "insert_edge"]
    args: tuple[int, ...]


@dataclass
class GedResult:
    distance: float
    bound: Bound
    edit_path: list[EditOp] | None = None
    mapping: tuple[int, ...] | None = None
    expanded: int = 0
    method: str = ""
    extra: dict = field(default_factory=dict)


def edit_path_from_mapping(
    g1: LabeledGraph, g2: LabeledGraph, mapping: Sequence[int]
) -> list[EditOp]:
    """Edit path induced by ``mapping[u] = v`` (or ``EPS`` for deletion)."""
    if len(mapping) != g1.n:
        raise ValueError("mapping must cover every node of g1")
    targets = [v for v in mapping if v != EPS]
    if len(set(targets)) != len(targets) or any(not 0 <= v < g2.n for v in targets):
        raise ValueError(f"mapping is not injective into g2: {mapping}")
    ops: list[EditOp] = []
    for u, v in enumerate(mapping):
        if v == EPS:
            ops.append(EditOp("delete_node", (u,)))
        elif g1.labels[u] != g2.labels[v]:
            ops.append(EditOp("relabel", (u, g2.labels[v])))
    image = set(targets)
    for v in range(g2.n):
        if v not in image:
            ops.append(EditOp("insert_node", (v, g2.labels[v])))
    kept = set()
    for u, w in g1.sorted_edges():
        a, b = mapping[u], mapping[w]
        if a != EPS and b != EPS and g2.has_edge(a, b):
            kept.add((min(a, b), max(a, b)))
        else:
            ops.append(EditOp("delete_edge", (u, w)))
    for e in g2.sorted_edges():
        if e not in kept:
            ops.append(EditOp("insert_edge", e))
    return ops


def mapping_cost(g1: LabeledGraph, g2: LabeledGraph, mapping: Sequence[int]) -> int:
    return len(edit_path_from_mapping(g1, g2, mapping))


def apply_edit_path(
    g1: LabeledGraph, g2_size: int, mapping: Sequence[int], path: Sequence[EditOp]
) -> LabeledGraph:
    """Replay ``path`` on ``g1``; the result is expressed in g2's node ids."""
    labels: dict[int, int] = {}
    for u, v in enumerate(mapping):
        if v != EPS:
            labels[v] = g1.labels[u]
    edges = set()
    for u, w in g1.edges:
        edges.add((u, w))
    for op in path:
        if op.kind == "relabel":
            u, lab = op.args
            labels[mapping[u]] = lab
        elif op.kind == "delete_node":
            pass
        elif op.kind == "insert_node":
            v, lab = op.args
            labels[v] = lab
        elif op.kind == "delete_edge":
            edges.discard(op.args)
    out_edges = set()
    for u, w in edges:
        a, b = mapping[u], mapping[w]
        if a == EPS or b == EPS:
            raise ValueError(f"edge ({u}, {w}) survives a node deletion")
        out_edges.add((min(a, b), max(a, b)))
    for op in path:
        if op.kind == "insert_edge":
            out_edges.add(op.args)
    if sorted(labels) != list(range(g2_size)):
        raise ValueError("edit path does not produce a dense node set")
    return LabeledGraph(tuple(labels[i] for i in range(g2_size)), frozenset(out_edges))
