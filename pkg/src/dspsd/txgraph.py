"""Temporal directed transaction graph and per-account formation sequences."""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional

from .errors import DataError, NodeNotFoundError


class AccountKind(str, Enum):
    EOA = "EOA"
    CONTRACT = "Contract"


PONZI, NORMAL = 1, 0


@dataclass(frozen=True)
class Account:
    id: str
    kind: AccountKind = AccountKind.EOA
    opcodes: tuple = ()
    label: Optional[int] = None

    def __post_init__(self):
        if not self.id:
            raise DataError("account id must be non-empty")
        object.__setattr__(self, "opcodes", tuple(self.opcodes))
        if self.kind is AccountKind.EOA:
            if self.opcodes:
                raise DataError(f"EOA {self.id} cannot carry opcodes")
            if self.label is not None:
                raise DataError(f"EOA {self.id} cannot carry a label")
        if self.label not in (None, PONZI, NORMAL):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def is_contract(self) -> bool:
        return self.kind is AccountKind.CONTRACT


@dataclass(frozen=True)
class TransactionEvent:
    src: str
    dst: str
    timestamp: int
    value: float = 0.0

    def __post_init__(self):
        if self.timestamp < 0:
            raise DataError("timestamp must be >= 0")
        if self.value < 0:
            raise DataError("value must be >= 0")


@dataclass(frozen=True)
class Snapshot:
    time: int
    edges: dict
    nodes: frozenset


@dataclass
class TemporalGraph:
    accounts: dict
    edges: dict
    formation: dict
    events: list = field(default_factory=list)

    @property
    def nodes(self) -> list:
        return list(self.accounts)

    @property
    def n_nodes(self) -> int:
        return len(self.accounts)

    def index(self) -> dict:
        return {a: i for i, a in enumerate(self.accounts)}

    def degree(self) -> dict:
        """Weighted in+out degree, self-loops counted once per event."""
        deg = dict.fromkeys(self.accounts, 0)
        for (s, d), w in self.edges.items():
            deg[s] += w
            if d != s:
                deg[d] += w
        return deg

    def contracts(self) -> list:
        return [a for a in self.accounts.values() if a.is_contract]

    def labeled(self) -> dict:
        return {a.id: a.label for a in self.accounts.values() if a.label is not None}


def _ordered(events: Iterable[TransactionEvent]) -> list:
    # sorted() is stable, so equal timestamps keep input order
    return sorted(events, key=lambda e: e.timestamp)


def build_graph(events: Iterable[TransactionEvent], accounts: Iterable[Account] = ()) -> TemporalGraph:
    """Aggregate events into weighted edges and per-node formation sequences.

    Endpoints missing from ``accounts`` are registered as EOAs. The
    formation sequence of a node lists the counterparty of every incident
    event, incoming and outgoing, in timestamp order; self-loops count
    toward edge weights only.
    """
    acc = {}
    for a in accounts:
        if a.id in acc:
            raise DataError(f"duplicate account {a.id}")
        acc[a.id] = a
    ordered = _ordered(events)
    edges: dict = defaultdict(int)
    formation: dict = defaultdict(list)
    for e in ordered:
        for end in (e.src, e.dst):
            if end not in acc:
                acc[end] = Account(end)
        edges[(e.src, e.dst)] += 1
        if e.src != e.dst:
            formation[e.src].append((e.dst, e.timestamp))
            formation[e.dst].append((e.src, e.timestamp))
    return TemporalGraph(
        accounts=acc,
        edges=dict(edges),
        formation={a: formation.get(a, []) for a in acc},
        events=ordered,
    )


def snapshot_at(g: TemporalGraph, t: int, events: Optional[Iterable[TransactionEvent]] = None) -> Snapshot:
    """Weighted edges of all events with ``timestamp <= t``."""
    if t < 0:
        raise ValueError("t must be >= 0")
    edges: dict = defaultdict(int)
    nodes = set()
    for e in (g.events if events is None else events):
        if e.timestamp <= t:
            edges[(e.src, e.dst)] += 1
            nodes.update((e.src, e.dst))
    return Snapshot(time=t, edges=dict(edges), nodes=frozenset(nodes))


def interactive_sequence(g: TemporalGraph, v: str) -> list:
    try:
        return list(g.formation[v])
    except KeyError:
        raise NodeNotFoundError(v) from None
