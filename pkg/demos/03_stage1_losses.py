"""Stage-1 embedding training on a ten-contract ring.

Prints the exact (full-softmax) structure and opcode losses before and
after training under both minibatch schedules.
"""
from dspsd.pipeline import TrainConfig, init_bundle, stage1_exact_loss, train_embeddings
from dspsd.txgraph import Account, AccountKind, TransactionEvent, build_graph

OPS = [["PUSH1", "ADD", "SSTORE"], ["CALL", "PUSH1"], ["SLOAD", "ADD", "ADD", "STOP"], ["MSTORE", "CALL"],
       ["PUSH2", "SUB", "JUMP"], ["ADD", "CALLVALUE"], ["STOP"], ["SSTORE", "SLOAD", "PUSH1"],
       ["JUMPI", "ISZERO"], ["RETURN", "PUSH1", "ADD"]]


def ring_graph():
    accounts = [Account(f"c{i}", AccountKind.CONTRACT, tuple(OPS[i]), i % 2) for i in range(10)]
    events = [TransactionEvent(f"c{i}", f"c{(i + 1) % 10}", 10 * rep + i) for rep in range(3) for i in range(10)]
    return build_graph(events, accounts)


g = ring_graph()
print(f"{g.n_nodes} nodes, {sum(g.edges.values())} events on {len(g.edges)} edges")
for schedule in ("stream", "snapshot"):
    for ctx in (False, True):
        cfg = TrainConfig(epochs_stage1=20, schedule=schedule, use_context=ctx)
        before, after = init_bundle(g, cfg), train_embeddings(g, cfg)
        s0, s1 = stage1_exact_loss(before, g, "structure_only"), stage1_exact_loss(after, g, "structure_only")
        o0, o1 = stage1_exact_loss(before, g, "opcode_only"), stage1_exact_loss(after, g, "opcode_only")
        print(f"{schedule:8s} context={ctx!s:5}  structure {s0:7.2f} -> {s1:7.2f}   opcode {o0:6.2f} -> {o1:6.2f}")
