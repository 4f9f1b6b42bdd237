import sys

import numpy as np
import pytest

from dspsd.txgraph import Account, AccountKind, TransactionEvent, build_graph


def contract(cid, ops, label=None):
    return Account(cid, AccountKind.CONTRACT, tuple(ops), label)


def events_from(triples):
    return [TransactionEvent(s, d, t) for s, d, t in triples]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def ring10():
    """Ten contracts on a directed ring, every edge used three times."""
    ops = [["PUSH1", "ADD", "SSTORE"], ["CALL", "PUSH1"], ["SLOAD", "ADD", "ADD", "STOP"], ["MSTORE", "CALL"],
           ["PUSH2", "SUB", "JUMP"], ["ADD", "CALLVALUE"], ["STOP"], ["SSTORE", "SLOAD", "PUSH1"],
           ["JUMPI", "ISZERO"], ["RETURN", "PUSH1", "ADD"]]
    accts = [contract(f"c{i}", ops[i], i % 2) for i in range(10)]
    trip = [(f"c{i}", f"c{(i + 1) % 10}", 10 * rep + i) for rep in range(3) for i in range(10)]
    return build_graph(events_from(trip), accts)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
