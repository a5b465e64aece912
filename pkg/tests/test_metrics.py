import math

import numpy as np
import pytest
from scipy.stats import kendalltau

from gedforge.metrics import (
    MetricError,
    evaluate,
    ged_to_sim,
    kendall_tau,
    kendall_tau_quadratic,
    nged,
    precision_at_k,
    reports_to_csv,
    spearman_rho,
    top_k,
)


def test_nged_examples():
    assert nged(0, 4, 7) == 0
    assert nged(3, 6, 6) == 0.5
    assert nged(3, 5, 7) == 0.5
    with pytest.raises(MetricError):
        nged(-1, 3, 3)
    with pytest.raises(MetricError):
        nged(1, 0, 3)


def test_similarity_transform():
    assert ged_to_sim(0) == 1.0
    assert abs(ged_to_sim(0.5) - 0.6065306597) <= 1e-9
    xs = np.sort(np.random.default_rng(0).uniform(0, 5, 100))
    sims = [ged_to_sim(x) for x in xs]
    assert all(a >= b for a, b in zip(sims, sims[1:]))
    with pytest.raises(MetricError):
        ged_to_sim(-0.1)


def test_spearman_examples():
    assert spearman_rho([1, 2, 3], [1, 2, 3]) == 1.0
    assert spearman_rho([1, 2, 3], [3, 2, 1]) == -1.0
    assert spearman_rho([1, 2, 3, 5, 4], [1, 2, 3, 4, 5]) == pytest.approx(0.9, abs=1e-15)
    with pytest.raises(MetricError):
        spearman_rho([1, 1, 1], [1, 2, 3])


def test_kendall_examples_and_oracle():
    assert kendall_tau([1, 2, 3, 4], [1, 2, 3, 4]) == 1.0
    assert kendall_tau([1, 2, 3, 4], [4, 3, 2, 1]) == -1.0
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 40))
        a = rng.integers(0, 6, n).astype(float)  # ties on purpose
        b = rng.integers(0, 6, n).astype(float)
        try:
            want = kendall_tau_quadratic(a, b)
        except MetricError:
            with pytest.raises(MetricError):
                kendall_tau(a, b)
            continue
        assert abs(kendall_tau(a, b) - want) <= 1e-12
        assert abs(want - kendalltau(a, b).statistic) <= 1e-12


def test_precision_at_k():
    ids = list(range(20))
    s = np.arange(20.0)
    assert precision_at_k(s, s, 10) == 1.0
    assert precision_at_k(s, -s, 10) == 0.0
    truth = s.copy()
    pred = s.copy()
    # five outsiders jump the queue: the predicted top ten keeps 15..19 only
    pred[[0, 1, 2, 3, 4]] = 100
    assert precision_at_k(pred, truth, 10, ids) == 0.5
    with pytest.raises(MetricError):
        precision_at_k(s, s, 21)


def test_top_k_ties_prefer_small_ids():
    assert top_k([1.0, 1.0, 1.0, 0.5], 2, ids=[7, 3, 5, 1]) == [3, 5]


def test_evaluate_perfect_and_constant():
    queries = [0, 1, 2]
    cands = list(range(10, 40))
    truth = lambda q, c: math.exp(-((q * 7 + c * 13) % 11) / 5)
    rep = evaluate(truth, truth, queries, cands)
    assert rep.mse == 0 and rep.rho == 1 and rep.tau == 1
    assert rep.p_at == {"p@10": 1.0, "p@20": 1.0}
    assert rep.excluded_rho_tau == 0

    const = evaluate(lambda q, c: 0.5, truth, queries, cands)
    values = np.array([[truth(q, c) for c in cands] for q in queries]).ravel()
    assert const.mse == pytest.approx(np.mean((values - 0.5) ** 2))
    assert const.rho is None and const.excluded_rho_tau == 3
    text = reports_to_csv([rep, const])
    assert text.splitlines()[0] == "method,mse(1e-3),rho,tau,p@10,p@20"


def test_evaluate_report_orders_candidates():
    rep = evaluate(lambda q, c: -c, lambda q, c: -c, [0], [5, 1, 3], ks=(1,))
    assert rep.queries[0].candidates == [1, 3, 5]
    assert rep.to_dict()["p_at"] == {"p@1": 1.0}
