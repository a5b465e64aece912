import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gedforge.exact import ged_astar
from gedforge.graph import (
    CorpusSpec,
    DanglingEdgeError,
    DuplicateNodeError,
    LabeledGraph,
    MalformedGraphError,
    NodeOrdering,
    SelfLoopError,
    bfs_keys,
    bfs_order,
    generate_corpus,
    generate_graph,
    graph_from_dict,
    graph_to_dict,
    has_unique_keys,
    load_dataset,
    parse_graph,
    permute_graph,
    save_dataset,
    serialize_graph,
    split_indices,
)

from conftest import make_graph


@st.composite
def graphs(draw, max_nodes=8, max_labels=4):
    n = draw(st.integers(1, max_nodes))
    labels = draw(st.lists(st.integers(0, max_labels - 1), min_size=n, max_size=n))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    chosen = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return make_graph(labels, [e for e, keep in zip(pairs, chosen) if keep])


def test_parse_minimal_graph():
    g = parse_graph('{"nodes":[{"id":0,"label":0}],"edges":[]}')
    assert g.n == 1 and g.labels == (0,) and not g.edges and g.num_labels == 1


def test_parse_alphabet_of_29():
    nodes = [{"id": i, "label": lab} for i, lab in enumerate([0, 3, 28, 5, 7, 1, 2, 9, 11, 4])]
    g = parse_graph(json.dumps({"nodes": nodes, "edges": [[0, 1], [1, 2]]}), num_labels=29)
    assert g.num_labels == 29 and g.n == 10


@pytest.mark.parametrize(
    "doc, err",
    [
        ('{"nodes":[{"id":0,"label":0},{"id":0,"label":1}],"edges":[]}', DuplicateNodeError),
        ('{"nodes":[{"id":0,"label":0}],"edges":[[0,3]]}', DanglingEdgeError),
        ('{"nodes":[{"id":0,"label":0}],"edges":[[0,0]]}', SelfLoopError),
        ('{"nodes":[{"id":0,"label":0},{"id":1,"label":0}],"edges":[[0,1],[1,0]]}', MalformedGraphError),
        ('{"nodes":[{"id":1,"label":0}],"edges":[]}', MalformedGraphError),
        ('{"edges":[]}', MalformedGraphError),
        ("not json", MalformedGraphError),
    ],
)
def test_parse_rejects(doc, err):
    with pytest.raises(err):
        parse_graph(doc)


def test_label_out_of_alphabet():
    with pytest.raises(ValueError):
        make_graph([0, 5], [], num_labels=3)


def test_round_trip_generator_output():
    rng = np.random.default_rng(5)
    for _ in range(100):
        g = generate_graph(int(rng.integers(1, 12)), 0.3, 4, rng)
        text = serialize_graph(g)
        assert json.loads(serialize_graph(parse_graph(text))) == json.loads(text)
        assert parse_graph(text) == g


@given(graphs())
def test_dict_round_trip(g):
    assert graph_from_dict(graph_to_dict(g)) == g


def test_dataset_io(tmp_path):
    gs = [make_graph([0, 1], [(0, 1)]), make_graph([2], [])]
    save_dataset(gs, tmp_path / "d.json")
    back = load_dataset(tmp_path / "d.json")
    assert [g.labels for g in back] == [(0, 1), (2,)]
    assert {g.num_labels for g in back} == {3}


def test_bfs_single_node():
    assert bfs_order(make_graph([0], [])).permutation == (0,)


def test_bfs_path_starts_at_middle():
    # a - b - c with b at id 2
    g = make_graph([0, 1, 0], [(0, 2), (2, 1)])
    order = bfs_order(g).permutation
    assert order[0] == 2
    # neighbours follow by key: label 1 on node 1 outranks label 0 on node 0
    assert order == (2, 1, 0)


def test_bfs_star_center_first():
    g = make_graph([0, 0, 1, 2, 3], [(1, 0), (1, 2), (1, 3), (1, 4)])
    order = bfs_order(g).permutation
    assert order[0] == 1
    assert order[1:] == (4, 3, 2, 0)  # leaves by descending label


@given(graphs())
@settings(max_examples=150)
def test_bfs_order_is_a_permutation(g):
    assert sorted(bfs_order(g).permutation) == list(range(g.n))


@given(graphs(), st.randoms(use_true_random=False))
@settings(max_examples=150)
def test_bfs_canonical_for_unique_keys(g, rnd):
    perm = list(range(g.n))
    rnd.shuffle(perm)
    h = permute_graph(g, perm)
    if has_unique_keys(g):
        assert permute_graph(g, bfs_order(g)) == permute_graph(h, bfs_order(h))
    # keys are a graph invariant either way
    assert sorted(bfs_keys(g)) == sorted(bfs_keys(h))


def test_permute_identity_and_inverse():
    rng = np.random.default_rng(1)
    g = generate_graph(7, 0.4, 3, rng)
    assert permute_graph(g, NodeOrdering.identity(7)) == g
    p = NodeOrdering(tuple(int(x) for x in rng.permutation(7)))
    assert permute_graph(permute_graph(g, p), p.inverse()) == g


def test_ordering_rejects_non_bijection():
    with pytest.raises(ValueError):
        NodeOrdering((0, 0, 1))


def test_permuted_graph_has_zero_ged():
    rng = np.random.default_rng(3)
    for _ in range(10):
        g = generate_graph(int(rng.integers(2, 8)), 0.4, 3, rng)
        h = permute_graph(g, rng.permutation(g.n).tolist())
        assert ged_astar(g, h).distance == 0


def test_generate_edge_cases():
    g = generate_graph(1, 0.5, 1, 0)
    assert g.n == 1 and not g.edges
    k5 = generate_graph(5, 1.0, 1, 0)
    assert len(k5.edges) == 10
    assert generate_graph(8, 0.3, 3, 42) == generate_graph(8, 0.3, 3, 42)


def test_generate_connected():
    rng = np.random.default_rng(0)
    for _ in range(30):
        g = generate_graph(int(rng.integers(2, 11)), 0.05, 3, rng, connected=True)
        # BFS from node 0 reaches everything
        seen, todo = {0}, [0]
        while todo:
            for v in g.neighbors[todo.pop()]:
                if v not in seen:
                    seen.add(v)
                    todo.append(v)
        assert len(seen) == g.n


def test_corpus_and_split():
    spec = CorpusSpec(num_graphs=50, duplicates=5)
    a = generate_corpus(spec, 11)
    assert a == generate_corpus(spec, 11)
    assert all(5 <= g.n <= 10 for g in a)
    split = split_indices(50, 11)
    members = split["train"] + split["val"] + split["test"]
    assert sorted(members) == list(range(50))
    assert (len(split["train"]), len(split["val"]), len(split["test"])) == (30, 10, 10)
    with pytest.raises(ValueError):
        split_indices(10, 0, (0.5, 0.2, 0.2))


def test_adjacency_is_read_only():
    g = make_graph([0, 0], [(0, 1)])
    assert g.adjacency[0, 1] == 1
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = 0


def test_labeled_graph_validates():
    with pytest.raises(ValueError):
        LabeledGraph((0, 1), frozenset({(0, 2)}))
