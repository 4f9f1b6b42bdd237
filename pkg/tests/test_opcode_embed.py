import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dspsd.errors import ConfigError, ShapeError
from dspsd.numerics import check_gradient, make_rng
from dspsd.opcode_embed import (EOA_KEY, UNK, OpcodeLexicon, OpcodeModel, PairCache, aggregate_opcode_embedding,
                                control_logic_matrix, convolve_features, encode, interactive_embedding,
                                mutual_attention, opcode_edge_loss, opcode_edge_loss_exact, opcode_log_probs,
                                pair_forward)

from conftest import contract

SEQS = {
    "a": ["PUSH1", "ADD", "SSTORE", "CALL"],
    "b": ["ADD", "ADD", "STOP"],
    "c": ["CALL", "PUSH1", "SLOAD", "NOVEL", "ADD", "SSTORE", "PUSH1"],
    "d": ["STOP"],
    EOA_KEY: [],
}


def small_model(seed, max_len=6, dim=4, n_filters=3, width=2, scale=(10.0, 20.0)):
    m = OpcodeModel.init([s for k, s in SEQS.items() if k != "c"], make_rng(seed), dim=dim,
                         n_filters=n_filters, width=width, max_len=max_len)
    m.filters *= scale[0]
    m.attn *= scale[1]
    m.lexicon.vectors *= 3
    return m


def cache_for(m, key_of=None):
    return PairCache(m, lambda k: SEQS[k], key_of or (lambda n: n))


def full_C(m, key):
    return convolve_features(control_logic_matrix(SEQS[key], m.lexicon, m.max_len), m.filters, m.bias)


def test_control_logic_lookup_and_stack():
    lex = OpcodeLexicon([UNK, "PUSH1", "STOP"], np.array([[0, 0], [.1, .2], [.3, .4]]))
    np.testing.assert_array_equal(control_logic_matrix(["PUSH1", "STOP"], lex, 2), [[.1, .2], [.3, .4]])


def test_control_logic_eoa_zero():
    lex = OpcodeLexicon.build([["PUSH1"]], 100, make_rng(0))
    X = control_logic_matrix(contract("c", []).opcodes, lex)
    assert X.shape == (300, 100) and not X.any()


def test_control_logic_truncates_and_unknown():
    lex = OpcodeLexicon([UNK, "A", "B"], np.array([[9.0], [1.0], [2.0]]))
    X = control_logic_matrix(["A", "B", "Q", "A", "B"], lex, 3)
    np.testing.assert_array_equal(X, [[1.0], [2.0], [9.0]])
    X = control_logic_matrix(["A"], lex, 3)
    np.testing.assert_array_equal(X, [[1.0], [0.0], [0.0]])


def test_convolve_hand_example():
    C = convolve_features(np.array([[1.0], [2.0], [3.0]]), np.ones((1, 2, 1)), np.zeros(1))
    np.testing.assert_allclose(C, [[math.tanh(3), math.tanh(5)]], atol=1e-15)


def test_convolve_zero_filters():
    C = convolve_features(make_rng(0).normal(size=(6, 3)), np.zeros((4, 2, 3)), np.zeros(4))
    assert np.all(C == 0.0)
    C = convolve_features(make_rng(0).normal(size=(6, 3)), np.zeros((4, 2, 3)), np.zeros(4), f=lambda x: x + 1)
    assert np.all(C == 1.0)


def test_convolve_shape_and_errors():
    m = OpcodeModel.init([["PUSH1"]], make_rng(0))
    C = convolve_features(np.zeros((300, 100)), m.filters, m.bias)
    assert C.shape == (100, 299)
    with pytest.raises(ShapeError):
        convolve_features(np.zeros((1, 100)), m.filters, m.bias)
    with pytest.raises(ShapeError):
        OpcodeModel(m.lexicon, m.filters, m.bias, m.attn, max_len=1)


def test_attention_zero_matrix_uniform():
    rng = make_rng(1)
    Cv, Cu = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
    a_v, a_u, D = mutual_attention(Cv, Cu, np.zeros((3, 3)))
    assert not D.any()
    np.testing.assert_allclose(a_v, 0.2)
    np.testing.assert_allclose(a_u, 0.2)


def test_attention_single_window():
    rng = make_rng(2)
    a_v, a_u, _ = mutual_attention(rng.normal(size=(3, 1)), rng.normal(size=(3, 1)), rng.normal(size=(3, 3)))
    assert a_v.tolist() == [1.0] and a_u.tolist() == [1.0]


def test_attention_shape_error():
    with pytest.raises(ShapeError):
        mutual_attention(np.ones((3, 4)), np.ones((2, 4)), np.ones((3, 3)))


def test_attention_direction():
    # a_u pools D over u's windows for each of v's windows and weights Cv
    Cv = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    Cu = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    a_v, a_u, D = mutual_attention(Cv, Cu, np.eye(2))
    raw_u = np.tanh(Cv.T @ Cu).max(axis=1)
    np.testing.assert_allclose(a_u, np.exp(raw_u) / np.exp(raw_u).sum())
    assert a_u[0] > a_u[1]
    np.testing.assert_allclose(interactive_embedding(Cv, a_u), Cv @ a_u)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6), st.integers(1, 8), st.integers(1, 5))
def test_attention_is_distribution(seed, l, d):
    rng = np.random.default_rng(seed)
    a_v, a_u, D = mutual_attention(rng.normal(size=(d, l)) * 3, rng.normal(size=(d, l)) * 3,
                                   rng.normal(size=(d, d)) * 3)
    for a in (a_v, a_u):
        assert np.all(a >= 0) and abs(a.sum() - 1.0) < 1e-12
    assert np.all(np.abs(D) <= 1)  # tanh may round to 1.0 in floating point


def test_attention_entries_strictly_inside():
    rng = make_rng(4)
    _, _, D = mutual_attention(rng.normal(size=(3, 6)), rng.normal(size=(3, 6)), rng.normal(size=(3, 3)))
    assert np.all(np.abs(D) < 1)


def test_interactive_embedding_cases():
    rng = make_rng(5)
    C = rng.normal(size=(4, 6))
    np.testing.assert_allclose(interactive_embedding(C, np.full(6, 1 / 6)), C.mean(axis=1))
    np.testing.assert_array_equal(interactive_embedding(C, np.eye(6)[2]), C[:, 2])
    a = rng.dirichlet(np.ones(6))
    e = interactive_embedding(C, a)
    assert np.all(e >= C.min(axis=1) - 1e-12) and np.all(e <= C.max(axis=1) + 1e-12)
    with pytest.raises(ShapeError):
        interactive_embedding(C, np.ones(5) / 5)


def test_aggregate_cases():
    v = np.array([1.0, -2.0, 0.5])
    np.testing.assert_array_equal(aggregate_opcode_embedding([v]), v)
    np.testing.assert_allclose(aggregate_opcode_embedding([v, v, v]), v)
    assert aggregate_opcode_embedding([v, 2 * v, -v, v]).shape == (3,)
    np.testing.assert_array_equal(aggregate_opcode_embedding([], dim=3), np.zeros(3))
    with pytest.raises(ValueError):
        aggregate_opcode_embedding([])


def test_aggregate_permutation_invariant():
    rng = make_rng(6)
    vs = list(rng.normal(size=(5, 4)))
    perm = [vs[i] for i in rng.permutation(5)]
    np.testing.assert_allclose(aggregate_opcode_embedding(vs), aggregate_opcode_embedding(perm), atol=1e-15)


@pytest.mark.parametrize("seed", range(3))
def test_compressed_form_matches_full(seed):
    m = small_model(seed)
    for kv, ku in [("a", "b"), ("a", EOA_KEY), ("c", "a"), (EOA_KEY, EOA_KEY), ("d", "c")]:
        ev, eu = encode(m, SEQS[kv]), encode(m, SEQS[ku])
        Cv, Cu = full_C(m, kv), full_C(m, ku)
        np.testing.assert_allclose(ev.expanded(), Cv, atol=1e-14)
        a_v, a_u, _ = mutual_attention(Cv, Cu, m.attn)
        res = pair_forward(ev, eu, m.attn)
        np.testing.assert_allclose(res.v_u, Cv @ a_u, atol=1e-12)
        np.testing.assert_allclose(res.u_v, Cu @ a_v, atol=1e-12)


def test_zero_params_loss():
    m = small_model(0)
    for p in m.params().values():
        p[...] = 0.0
    for k in (1, 3, 5):
        loss, grads = opcode_edge_loss(cache_for(m), "a", "b", 1.5, ["c", "d", EOA_KEY, "a", "b"][:k])
        assert loss == pytest.approx(1.5 * (k + 1) * math.log(2), abs=1e-12)
    with pytest.raises(ConfigError):
        opcode_edge_loss(cache_for(m), "a", "b", 1.0, [])


def test_exact_probability_normalizes():
    m = small_model(1)
    nodes = ["a", "b", "c", "d"]
    for v in nodes:
        p = np.exp(opcode_log_probs(cache_for(m), v, nodes))
        assert abs(p.sum() - 1.0) < 1e-9
        assert np.all(p > 0)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", ["lexicon", "filters", "bias", "attn"])
def test_negsampled_gradient(seed, name):
    m = small_model(seed)
    negs = ["c", EOA_KEY, "a", "d"]
    _, grads = opcode_edge_loss(cache_for(m), "a", "b", 2.0, negs)

    def f(x):
        mm = m.copy()
        mm.params()[name][...] = x
        return opcode_edge_loss(cache_for(mm), "a", "b", 2.0, negs)[0]

    assert check_gradient(f, m.params()[name], grads[name]) < 1e-4


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("name", ["lexicon", "filters", "attn"])
def test_exact_gradient(seed, name):
    m = small_model(seed, width=3, max_len=5)
    cands = ["a", "b", "c"]
    _, grads = opcode_edge_loss_exact(cache_for(m), "c", "a", 1.0, cands)

    def f(x):
        mm = m.copy()
        mm.params()[name][...] = x
        return opcode_edge_loss_exact(cache_for(mm), "c", "a", 1.0, cands)[0]

    assert check_gradient(f, m.params()[name], grads[name]) < 1e-4


def test_shared_eoa_key():
    m = small_model(2)
    key_of = lambda n: EOA_KEY if n.startswith("e") else n  # noqa: E731
    c = cache_for(m, key_of)
    k = c.key_of
    assert k("e1") == k("e2") == EOA_KEY
    # every EOA shares one encoding: the constant tanh(b) column
    np.testing.assert_allclose(c.aware(k("e1"), k("a")), np.tanh(m.bias), atol=1e-15)
    loss1, _ = opcode_edge_loss(cache_for(m, key_of), "a", "e1", 1.0, ["e2"])
    loss2, _ = opcode_edge_loss(cache_for(m, key_of), "a", EOA_KEY, 1.0, [EOA_KEY])
    assert loss1 == loss2


def test_pair_cache_orientation():
    m = small_model(3)
    c = cache_for(m)
    Ca, Cb = full_C(m, "a"), full_C(m, "b")
    a_b, a_a, _ = mutual_attention(Ca, Cb, m.attn)
    np.testing.assert_allclose(c.aware("a", "b"), Ca @ a_a, atol=1e-12)
    assert c.score("a", "b") == pytest.approx(float((Ca @ a_a) @ (Cb @ a_b)), abs=1e-12)
    # A is not symmetric, so the reversed pair attends differently
    b_a, b_b, _ = mutual_attention(Cb, Ca, m.attn)
    np.testing.assert_allclose(c.aware("b", "a"), Cb @ b_b, atol=1e-12)
    assert c.score("b", "a") == pytest.approx(float((Cb @ b_b) @ (Ca @ b_a)), abs=1e-12)
    assert abs(c.score("a", "b") - c.score("b", "a")) > 1e-9
