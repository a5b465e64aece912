import itertools
import math

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from gedforge.assignment import (
    assignment_kernel,
    build_ged_cost_matrix,
    ged_bipartite,
    ged_hed,
    lap_bruteforce,
    solve_lap_hungarian,
    solve_lap_jv,
    solve_transportation,
)
from gedforge.exact import ged_astar

from conftest import fig2_pair, make_graph, transport_vertex_oracle

SOLVERS = [solve_lap_hungarian, solve_lap_jv]


@pytest.mark.parametrize("solve", SOLVERS)
def test_lap_small_examples(solve):
    a = solve([[0.0]])
    assert a.perm == (0,) and a.total_cost == 0
    a = solve([[1, 2], [3, 1]])
    assert a.perm == (0, 1) and a.total_cost == 2
    assert solve([[0, 1], [1, 0]]).total_cost == 0


@pytest.mark.parametrize("solve", SOLVERS)
def test_lap_matches_enumeration(solve):
    rng = np.random.default_rng(0)
    for _ in range(60):
        n = int(rng.integers(1, 7))
        c = rng.uniform(0, 10, (n, n))
        assert abs(solve(c).total_cost - lap_bruteforce(c).total_cost) <= 1e-9


@pytest.mark.parametrize("solve", SOLVERS)
def test_lap_integer_ties_and_scipy(solve):
    rng = np.random.default_rng(1)
    for _ in range(100):
        n = int(rng.integers(1, 25))
        c = rng.integers(0, 4, (n, n)).astype(float)  # many ties
        r, col = linear_sum_assignment(c)
        a = solve(c)
        assert sorted(a.perm) == list(range(n))
        assert a.total_cost == pytest.approx(c[r, col].sum(), abs=1e-9)


@pytest.mark.parametrize("solve", SOLVERS)
def test_lap_rejects_bad_input(solve):
    with pytest.raises(ValueError):
        solve(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        solve([[0, np.nan], [1, 1]])


def test_cost_matrix_structure():
    a, b = make_graph([0], [], 2), make_graph([0], [], 2)
    c = build_ged_cost_matrix(a, b)
    assert c.shape == (2, 2)
    assert c[0, 0] == 0 and c[0, 1] == 1 and c[1, 0] == 1 and c[1, 1] == 0
    c = build_ged_cost_matrix(a, make_graph([1], [], 2))
    assert c[0, 0] == 1
    g3 = make_graph([0, 1, 0], [(0, 1)])
    g5 = make_graph([0] * 5, [(0, 1), (1, 2)])
    c = build_ged_cost_matrix(g3, g5)
    assert c.shape == (8, 8)
    sentinel = c[0, 5 + 1]
    assert sentinel > c.shape[0] * 1  # off-diagonal deletions are forbidden


def test_bipartite_and_hed_bounds(small_pairs):
    for g1, g2 in small_pairs:
        exact = ged_astar(g1, g2).distance
        assert ged_hed(g1, g2).distance <= exact
        for solver in ("hungarian", "jv"):
            for model in ("unit", "augmented"):
                res = ged_bipartite(g1, g2, solver, model)
                assert res.distance >= exact
                assert len(res.edit_path) == res.distance


def test_bounds_on_fig2_and_identity():
    g1, g2 = fig2_pair()
    assert ged_bipartite(g1, g2).distance >= 3
    assert ged_hed(g1, g2).distance <= 3
    for solver in ("hungarian", "jv"):
        assert ged_bipartite(g1, g1, solver).distance == 0
    assert ged_hed(g1, g1).distance == 0
    a, b = make_graph([0], [], 2), make_graph([1], [], 2)
    assert ged_hed(a, b).distance <= 1


def test_transport_trivial_cases():
    flow, cost = solve_transportation([[0.0, 0.0]], [[3.0, 4.0]])
    assert flow.flows.tolist() == [[1.0]] and cost == 5.0
    x = np.array([[0.0, 1.0], [2.0, -1.0]])
    flow, cost = solve_transportation(x, x)
    assert cost == 0.0
    assert np.allclose(flow.flows, np.diag([0.5, 0.5]))


def test_transport_matches_vertex_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        n1, n2 = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x, y = rng.normal(size=(n1, 2)), rng.normal(size=(n2, 2))
        flow, cost = solve_transportation(x, y)
        flow.check(1e-12)
        assert abs(cost - transport_vertex_oracle(x, y)) <= 1e-9


def test_transport_rejects_mismatched_dims():
    with pytest.raises(ValueError):
        solve_transportation(np.zeros((2, 2)), np.zeros((2, 3)))


def _brute_kernel(xs, ys, k):
    n = max(len(xs), len(ys))
    xs = list(xs) + [None] * (n - len(xs))
    ys = list(ys) + [None] * (n - len(ys))
    best = -math.inf
    for perm in itertools.permutations(range(n)):
        total = sum(
            0.0 if xs[i] is None or ys[j] is None else k(xs[i], ys[j])
            for i, j in enumerate(perm)
        )
        best = max(best, total)
    return best


def test_assignment_kernel():
    lin = lambda a, b: float(np.dot(a, b))
    rng = np.random.default_rng(6)
    # unit vectors: k(x, x) = 1 >= k(x, y)
    xs = rng.normal(size=(5, 3))
    xs /= np.linalg.norm(xs, axis=1, keepdims=True)
    assert assignment_kernel(xs, xs, lin) == pytest.approx(5.0, abs=1e-12)
    assert assignment_kernel([xs[0]], [xs[1]], lin) == pytest.approx(lin(xs[0], xs[1]))
    for _ in range(30):
        a = rng.normal(size=(int(rng.integers(1, 6)), 2))
        b = rng.normal(size=(int(rng.integers(1, 6)), 2))
        assert assignment_kernel(a, b, lin) == pytest.approx(_brute_kernel(a, b, lin), abs=1e-9)
