import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dspsd.errors import DataError, NodeNotFoundError
from dspsd.txgraph import (Account, AccountKind, TransactionEvent, build_graph, interactive_sequence,
                           snapshot_at)

from conftest import contract, events_from

ABC = events_from([("a", "b", 1), ("a", "c", 5), ("a", "b", 9)])


def test_empty_graph():
    g = build_graph([])
    assert g.edges == {} and g.n_nodes == 0


def test_edge_weight_counts_events():
    g = build_graph(events_from([("a", "b", 1), ("a", "b", 9)]))
    assert g.edges == {("a", "b"): 2}


def test_formation_sequence_order():
    g = build_graph(ABC)
    assert interactive_sequence(g, "a") == [("b", 1), ("c", 5), ("b", 9)]


def test_formation_includes_incoming():
    g = build_graph(events_from([("x", "v", 2)]))
    assert interactive_sequence(g, "v") == [("x", 2)]


def test_isolated_node_and_unknown():
    g = build_graph([], [contract("c", ["STOP"])])
    assert interactive_sequence(g, "c") == []
    with pytest.raises(NodeNotFoundError):
        interactive_sequence(g, "nope")


def test_ties_keep_input_order():
    g = build_graph(events_from([("a", "z", 3), ("a", "y", 3), ("a", "x", 1)]))
    assert interactive_sequence(g, "a") == [("x", 1), ("z", 3), ("y", 3)]


def test_self_loop_weight_only():
    g = build_graph(events_from([("a", "a", 1), ("a", "b", 2)]))
    assert g.edges[("a", "a")] == 1
    assert interactive_sequence(g, "a") == [("b", 2)]


def test_auto_register_eoa():
    g = build_graph(ABC, [contract("b", ["PUSH1"])])
    assert g.accounts["a"].kind is AccountKind.EOA
    assert g.accounts["b"].is_contract


def test_duplicate_account_rejected():
    with pytest.raises(DataError):
        build_graph([], [contract("c", ["STOP"]), contract("c", ["ADD"])])


def test_account_invariants():
    with pytest.raises(DataError):
        Account("e", AccountKind.EOA, ("PUSH1",))
    with pytest.raises(DataError):
        Account("e", AccountKind.EOA, (), 1)
    with pytest.raises(DataError):
        contract("c", ["ADD"], 2)
    with pytest.raises(DataError):
        TransactionEvent("a", "b", -1)


def test_snapshot_examples():
    g = build_graph(ABC)
    assert snapshot_at(g, 0).edges == {}
    assert snapshot_at(g, 5).edges == {("a", "b"): 1, ("a", "c"): 1}
    assert snapshot_at(g, 100).edges == g.edges


triples = st.lists(st.tuples(st.sampled_from("abcde"), st.sampled_from("abcde"), st.integers(0, 20)),
                   max_size=40)


@settings(max_examples=60, deadline=None)
@given(triples)
def test_weight_sum_equals_events(tr):
    g = build_graph(events_from(tr))
    assert sum(g.edges.values()) == len(tr)
    # each non-self-loop event appears in both endpoints' sequences
    assert sum(len(s) for s in g.formation.values()) == 2 * sum(1 for s, d, _ in tr if s != d)


@settings(max_examples=60, deadline=None)
@given(triples, st.integers(0, 20), st.integers(0, 20))
def test_snapshot_monotone(tr, t1, t2):
    g = build_graph(events_from(tr))
    lo, hi = sorted((t1, t2))
    s1, s2 = snapshot_at(g, lo), snapshot_at(g, hi)
    assert all(w <= s2.edges[e] for e, w in s1.edges.items())
    assert all(g.edges[e] >= w for e, w in s2.edges.items())


@settings(max_examples=40, deadline=None)
@given(triples)
def test_rebuild_idempotent(tr):
    g = build_graph(events_from(tr))
    h = build_graph(g.events, g.accounts.values())
    assert h.edges == g.edges and h.formation == g.formation
