import math

import numpy as np
import pytest

from gedforge import autodiff as ad
from gedforge.autodiff import Tensor
from gedforge.graph import generate_graph, has_unique_keys, permute_graph
from gedforge.model import (
    Checkpoint,
    ConfigError,
    GraphTooLargeError,
    ModelConfig,
    emb_avg_score,
    gcn_encode,
    init_params,
    model_forward,
    pair_loss,
    prepare_graph,
    score_batch,
    similarity_matrix,
    train,
)

from conftest import generic_params, make_graph


def scalar_gcn():
    cfg = ModelConfig(kind="embavg", input_dim=1, gcn_dims=[1])
    params = {"gcn.0.w": Tensor([[1.0]]), "gcn.0.b": Tensor([0.0])}
    return cfg, params


def test_gcn_hand_examples():
    cfg, params = scalar_gcn()
    assert gcn_encode(make_graph([0], []), params, cfg).data.tolist() == [[1.0]]
    out = gcn_encode(make_graph([0, 0], [(0, 1)]), params, cfg).data
    assert np.allclose(out, 1.0)


def test_gcn_equivariance():
    cfg = ModelConfig(kind="embavg", input_dim=3)
    params = init_params(cfg, 0)
    rng = np.random.default_rng(1)
    for _ in range(30):
        g = generate_graph(int(rng.integers(1, 11)), 0.3, 3, rng)
        p = rng.permutation(g.n).tolist()
        h = gcn_encode(g, params, cfg).data
        hp = gcn_encode(permute_graph(g, p), params, cfg).data
        assert np.array_equal(hp, h[p])


def test_similarity_matrix_examples():
    one = np.array([[1.0]])
    assert similarity_matrix(one, one, [0], [0], 1, 1).data.tolist() == [[1.0]]
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 2.0], [0.0, 3.0], [0.0, 1.0]])
    assert not similarity_matrix(a, b, [0, 1], [0, 1, 2], 4, 7).data.any()
    rng = np.random.default_rng(0)
    h1, h2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    o1, o2 = [3, 1, 0, 4, 2], [0, 2, 4, 1, 3]
    got = similarity_matrix(h1, h2, o1, o2, 5, 5).data
    assert np.allclose(got, h1[o1] @ h2[o2].T, atol=1e-12)


def test_default_cnn_shape_and_validation():
    cfg = ModelConfig(kind="gsimcnn", input_dim=3)
    assert cfg.cnn_output() == (128, 1)
    bad = [dict(layer) for layer in cfg.cnn_spec[:2]]  # one conv + pool leaves 5x5
    with pytest.raises(ConfigError):
        ModelConfig(kind="gsimcnn", cnn_spec=bad)
    with pytest.raises(ConfigError):
        ModelConfig(kind="gsimcnn", dense_dims=[64, 1])
    with pytest.raises(ConfigError):
        ModelConfig(kind="other")


def test_cnn_head_receives_128_channels():
    cfg = ModelConfig(kind="gsimcnn", input_dim=3)
    params = init_params(cfg, 0)
    assert params["dense.0.w"].shape == (128, 64)
    assert params["conv.4.w"].shape == (128, 128, 5, 5)


def test_forward_range_and_permutation_invariance():
    cfg = ModelConfig(kind="gsimcnn", input_dim=3)
    params = init_params(cfg, 3)
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 8:
        g = generate_graph(int(rng.integers(3, 11)), 0.3, 3, rng, connected=True)
        if not has_unique_keys(g):
            continue
        checked += 1
        base = model_forward(g, g, params, cfg)
        assert 0.0 < base < 1.0
        for _ in range(3):
            h = permute_graph(g, rng.permutation(g.n).tolist())
            assert model_forward(g, h, params, cfg) == base


def test_graph_too_large():
    cfg = ModelConfig(kind="gsimcnn", input_dim=1, pad_to=4, resize_to=10)
    with pytest.raises(GraphTooLargeError):
        prepare_graph(generate_graph(5, 0.5, 1, 0), cfg)


def test_embavg_identical_graphs():
    cfg = ModelConfig(kind="embavg", input_dim=3)
    params = init_params(cfg, 1)
    g = generate_graph(6, 0.4, 3, 5)
    m = gcn_encode(g, params, cfg).data.mean(axis=0)
    want = 1.0 / (1.0 + math.exp(-float(m @ m)))
    assert emb_avg_score(g, g, params, cfg) == pytest.approx(want, abs=1e-15)
    batched = score_batch([prepare_graph(g, cfg)], [prepare_graph(g, cfg)], params, cfg)
    assert batched.data[0] == pytest.approx(want, abs=1e-12)


def test_loss_examples():
    cfg = ModelConfig(kind="embavg", input_dim=3)
    params = init_params(cfg, 0)
    graphs = [generate_graph(n, 0.4, 3, n) for n in (3, 5, 6, 8)]
    left = [prepare_graph(g, cfg) for g in graphs[:2]]
    right = [prepare_graph(g, cfg) for g in graphs[2:]]
    pred = score_batch(left, right, params, cfg).data
    assert pair_loss(left, right, pred, params, cfg).item() == 0.0
    single = [
        pair_loss([left[k]], [right[k]], [0.3], params, cfg).item() for k in range(2)
    ]
    both = pair_loss(left, right, [0.3, 0.3], params, cfg).item()
    assert both == pytest.approx(sum(single) / 2, abs=1e-15)
    with pytest.raises(ValueError):
        pair_loss(left, right, [0.3], params, cfg)


def test_end_to_end_gradcheck():
    cfg = ModelConfig(kind="gsimcnn", input_dim=3)
    params = generic_params(cfg, 0)
    graphs = [generate_graph(n, 0.4, 3, n, connected=True) for n in (4, 7, 6, 9)]
    left = [prepare_graph(g, cfg) for g in graphs[:2]]
    right = [prepare_graph(g, cfg) for g in graphs[2:]]
    f = lambda: pair_loss(left, right, [0.2, 0.7], params, cfg)
    # a 1e-4 step still crosses ReLU/max-pool switch points somewhere in the stack
    for name in ("gcn.0.w", "gcn.2.b", "conv.4.b", "dense.2.w", "dense.0.b"):
        assert ad.gradcheck(f, [params[name]], eps=1e-5) < 1e-3, name


def _tiny_training_set():
    rng = np.random.default_rng(0)
    graphs = [generate_graph(int(rng.integers(3, 7)), 0.4, 2, rng, connected=True) for _ in range(12)]
    pairs = [(i, j, abs(graphs[i].n - graphs[j].n) + 1) for i in range(8) for j in range(i + 1, 8)]
    val = [(i, j, abs(graphs[i].n - graphs[j].n) + 1) for i in range(8, 12) for j in range(8)]
    return graphs, pairs, val


def test_train_zero_iterations_returns_init():
    graphs, pairs, val = _tiny_training_set()
    cfg = ModelConfig(kind="embavg", input_dim=2, iterations=0)
    res = train(graphs, pairs, val, cfg, seed=4)
    init = init_params(cfg, 4)
    assert res.checkpoint.iteration == 0
    for k, v in init.items():
        assert np.array_equal(res.checkpoint.params[k].data, v.data)


def test_train_deterministic_and_checkpoint_round_trip(tmp_path):
    graphs, pairs, val = _tiny_training_set()
    cfg = ModelConfig(kind="gsimcnn", input_dim=2, iterations=6, eval_every=2, batch_size=4)
    a = train(graphs, pairs, val, cfg, seed=1)
    b = train(graphs, pairs, val, cfg, seed=1)
    assert a.checkpoint.dumps() == b.checkpoint.dumps()
    assert a.trace_csv() == b.trace_csv()
    a.checkpoint.save(tmp_path / "c.json")
    back = Checkpoint.load(tmp_path / "c.json")
    assert back.dumps() == a.checkpoint.dumps()
    g1, g2 = graphs[0], graphs[5]
    assert back.score(g1, g2) == a.checkpoint.score(g1, g2)
