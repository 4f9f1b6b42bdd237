import math

import numpy as np
import pytest

from dspsd.errors import ConfigError, NodeNotFoundError
from dspsd.numerics import check_gradient, make_rng
from dspsd.structure_embed import (NoiseDistribution, StructureTable, conditional_prob, edge_loss_exact,
                                   edge_loss_negsampled, exact_structure_loss, negsampled_batch)
from dspsd.txgraph import build_graph

from conftest import events_from


def table_of(vectors, context=None):
    vectors = np.asarray(vectors, dtype=float)
    return StructureTable([f"n{i}" for i in range(len(vectors))], vectors,
                          None if context is None else np.asarray(context, dtype=float))


def test_prob_two_equal_vectors():
    t = table_of([[0.3, -0.2], [0.3, -0.2]])
    assert conditional_prob("n0", "n1", t) == pytest.approx(0.5, abs=1e-15)


def test_prob_uniform_when_zero():
    t = table_of(np.zeros((5, 3)))
    for x in t.nodes:
        assert conditional_prob("n2", x, t) == pytest.approx(0.2, abs=1e-15)


def test_prob_hand_value():
    # v = e1 = [1,0]; candidates e1, e2 = [0,1], e3 = 0 -> e / (e + 2)
    t = table_of([[1, 0], [0, 1], [0, 0]])
    assert conditional_prob("n0", "n0", t) == pytest.approx(math.e / (math.e + 2), abs=1e-12)
    assert conditional_prob("n0", "n0", t) == pytest.approx(0.5761168847658291, abs=1e-12)


def test_prob_restricted_node_set():
    t = table_of([[1, 0], [0, 1], [0, 0]])
    p = conditional_prob("n0", "n1", t, nodes=["n1", "n2"])
    assert p == pytest.approx(0.5)
    with pytest.raises(ValueError):
        conditional_prob("n0", "n0", t, nodes=["n1", "n2"])
    with pytest.raises(NodeNotFoundError):
        conditional_prob("n0", "zz", t)


def test_prob_stable_for_large_scores():
    t = table_of([[300.0, 0], [299.0, 0], [0, 0]])
    p = [conditional_prob("n0", x, t) for x in t.nodes]
    assert all(np.isfinite(p)) and sum(p) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("n", [2, 7, 20, 50])
def test_prob_sums_to_one(n):
    rng = make_rng(n)
    t = StructureTable.init([f"n{i}" for i in range(n)], 6, rng)
    t.vectors *= 20
    for v in t.nodes[:5]:
        assert abs(sum(conditional_prob(v, x, t) for x in t.nodes) - 1.0) < 1e-9


def test_exact_loss_value():
    t = table_of([[0.3, -0.2], [0.3, -0.2]])
    loss, _, _ = edge_loss_exact("n0", "n1", 2.0, t)
    assert loss == pytest.approx(2 * math.log(2), abs=1e-12)
    assert loss == pytest.approx(1.3862943611198906, abs=1e-12)


def test_exact_loss_to_zero_when_certain():
    t = table_of([[30.0, 0.0], [30.0, 0.0], [-30.0, 0.0]])
    loss, _, _ = edge_loss_exact("n0", "n1", 1.0, t, nodes=["n1", "n2"])
    assert loss < 1e-12


def test_exact_loss_rejects_nonpositive_weight():
    with pytest.raises(ValueError):
        edge_loss_exact("n0", "n1", 0.0, table_of(np.zeros((2, 2))))


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("use_context", [False, True])
def test_exact_loss_gradient(seed, use_context):
    rng = make_rng(seed)
    t = StructureTable.init(["a", "b", "c"], 4, rng, use_context)
    t.vectors *= 10
    if use_context:
        t.context *= 10
    loss, gE, gC = edge_loss_exact("a", "c", 1.7, t)

    def f_e(x):
        tt = StructureTable(t.nodes, x, t.context)
        return edge_loss_exact("a", "c", 1.7, tt)[0]

    assert check_gradient(f_e, t.vectors, gE) < 1e-4
    if use_context:
        def f_c(x):
            return edge_loss_exact("a", "c", 1.7, StructureTable(t.nodes, t.vectors, x))[0]
        assert check_gradient(f_c, t.context, gC) < 1e-4


def test_negsampled_zero_vectors():
    t = table_of(np.zeros((4, 3)))
    noise = NoiseDistribution([1, 1, 1, 1])
    for k in (1, 3, 5):
        loss, *_ = edge_loss_negsampled("n0", "n1", 2.5, t, k, noise, make_rng(0))
        assert loss == pytest.approx(2.5 * (k + 1) * math.log(2), abs=1e-12)


def test_negsampled_hand_value():
    t = table_of([[0.5, -1.0], [1.0, 0.25], [-0.5, 2.0]])
    noise = NoiseDistribution([1, 1, 1])
    loss, _, _, negs = edge_loss_negsampled("n0", "n1", 1.5, t, 1, noise, make_rng(3))
    assert negs[0] != 1
    v, x, z = t.vectors[0], t.vectors[1], t.vectors[negs[0]]
    ls = lambda s: -math.log1p(math.exp(-s))  # noqa: E731
    expected = -1.5 * (ls(float(x @ v)) + ls(-float(z @ v)))
    assert loss == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_negsampled_gradient(seed):
    rng = make_rng(seed, 1)
    t = StructureTable.init([f"n{i}" for i in range(5)], 3, rng)
    t.vectors *= 8
    noise = NoiseDistribution([3, 1, 2, 2, 1])
    loss, gE, _, negs = edge_loss_negsampled("n1", "n3", 1.0, t, 4, noise, make_rng(seed, 2))

    def f(x):
        return negsampled_batch(x, x, [1], [3], negs[None], [1.0])[0]

    assert check_gradient(f, t.vectors, gE) < 1e-4


def test_noise_excludes_target():
    noise = NoiseDistribution([5, 1, 1], power=0.75)
    s = noise.sample(make_rng(0), (200, 5), exclude=0)
    assert not np.any(s == 0)
    np.testing.assert_allclose(noise.probs, np.array([5, 1, 1]) ** 0.75 / np.sum(np.array([5, 1, 1]) ** 0.75))


def test_noise_degenerate():
    with pytest.raises(ConfigError):
        NoiseDistribution([0, 0])
    with pytest.raises(ConfigError):
        NoiseDistribution([0, 4, 0]).sample(make_rng(0), (1, 3), exclude=1)
    with pytest.raises(ConfigError):
        edge_loss_negsampled("n0", "n1", 1.0, table_of(np.zeros((2, 2))), 0, NoiseDistribution([1, 1]), make_rng(0))


def _ten_node_graph(seed):
    r = make_rng(seed, 99)
    trip = [(f"n{r.integers(10)}", f"n{r.integers(10)}", t) for t in range(25)]
    trip = [(s, d if d != s else f"n{(int(s[1:]) + 1) % 10}", t) for s, d, t in trip]
    return build_graph(events_from(trip + [(f"n{i}", f"n{(i + 3) % 10}", 30 + i) for i in range(10)]))


def test_exact_sgd_epoch_decreases_loss():
    wins, seeds = 0, 40
    for seed in range(seeds):
        g = _ten_node_graph(seed)
        t = StructureTable.init(g.nodes, 8, make_rng(seed))
        before = exact_structure_loss(t, g.edges)
        for (v, x), w in g.edges.items():
            _, gE, _ = edge_loss_exact(v, x, w, t)
            t.vectors -= 0.01 * gE
        wins += exact_structure_loss(t, g.edges) < before
    assert wins / seeds >= 0.95


def test_negsampled_training_lowers_exact_loss():
    g = build_graph(events_from([("a", "b", 1), ("b", "c", 2), ("c", "a", 3), ("a", "b", 4), ("d", "e", 5),
                                 ("e", "d", 6), ("a", "c", 7)]))
    t = StructureTable.init(g.nodes, 8, make_rng(5))
    noise = NoiseDistribution.from_graph(g, t)
    rng = make_rng(6)
    before = exact_structure_loss(t, g.edges)
    idx = {n: i for i, n in enumerate(t.nodes)}
    for _ in range(200):
        for (v, x), w in g.edges.items():
            negs = noise.sample(rng, (1, 5), exclude=idx[x])
            _, (rE, dE), (rC, dC) = negsampled_batch(t.vectors, t.vectors, [idx[v]], [idx[x]], negs, [w])
            np.add.at(t.vectors, rE, -0.01 * dE)
            np.add.at(t.vectors, rC, -0.01 * dC)
    assert exact_structure_loss(t, g.edges) < before


def test_exact_structure_loss_matches_edges():
    g = _ten_node_graph(0)
    t = StructureTable.init(g.nodes, 5, make_rng(1))
    direct = sum(-w * math.log(conditional_prob(v, x, t)) for (v, x), w in g.edges.items())
    assert exact_structure_loss(t, g.edges, chunk=3) == pytest.approx(direct, rel=1e-12)
