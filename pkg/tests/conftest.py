import itertools
import math

import numpy as np
import pytest

from gedforge.graph import LabeledGraph, generate_graph
from gedforge.model import init_params


def make_graph(labels, edges, num_labels=0):
    return LabeledGraph(tuple(labels), frozenset(tuple(sorted(e)) for e in edges), num_labels)


def fig2_pair():
    """Two 4-node graphs at GED 3: two edge deletions and one edge insertion."""
    g1 = make_graph([0, 1, 2, 3], [(0, 1), (1, 2), (0, 2), (0, 3)])
    g2 = make_graph([0, 1, 2, 3], [(0, 1), (1, 2), (1, 3)])
    return g1, g2


def random_pairs(count, max_nodes, seed, labels=3, min_nodes=1):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n1 = int(rng.integers(min_nodes, max_nodes + 1))
        n2 = int(rng.integers(min_nodes, max_nodes + 1))
        p = float(rng.uniform(0.1, 0.7))
        out.append(
            (
                generate_graph(n1, p, labels, rng),
                generate_graph(n2, p, labels, rng),
            )
        )
    return out


@pytest.fixture(scope="session")
def small_pairs():
    """200 seeded pairs with at most 6 nodes per graph."""
    return random_pairs(200, 6, seed=2024)


def transport_vertex_oracle(x, y):
    """Minimum of the transport cost over every basic feasible solution.

    A basis picks n1 + n2 - 1 cells; the marginal equations then fix the flow
    on those cells. Feasible (non-negative) solutions are the polytope's
    vertices, one of which is optimal.
    """
    x, y = np.atleast_2d(x), np.atleast_2d(y)
    n1, n2 = len(x), len(y)
    dist = np.sqrt(((x[:, None] - y[None]) ** 2).sum(-1))
    cells = [(i, j) for i in range(n1) for j in range(n2)]
    rhs = np.concatenate([np.full(n1, 1 / n1), np.full(n2, 1 / n2)])
    best = math.inf
    for basis in itertools.combinations(range(len(cells)), n1 + n2 - 1):
        a = np.zeros((n1 + n2, len(basis)))
        for col, c in enumerate(basis):
            i, j = cells[c]
            a[i, col] = 1
            a[n1 + j, col] = 1
        if np.linalg.matrix_rank(a) < len(basis):
            continue
        t, *_ = np.linalg.lstsq(a, rhs, rcond=None)
        if np.abs(a @ t - rhs).max() > 1e-12 or t.min() < -1e-12:
            continue
        best = min(best, math.fsum(t[col] * dist[cells[c]] for col, c in enumerate(basis)))
    return best


def generic_params(cfg, seed):
    """Default weights with small random biases.

    With zero biases the zero-padded part of the similarity image puts conv
    pre-activations exactly on the ReLU kink, where central differences are
    meaningless. Random biases move the check to a differentiable point.
    """
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    for name, p in params.items():
        if name.endswith(".b"):
            p.data = rng.uniform(-0.1, 0.1, p.shape)
    return params
