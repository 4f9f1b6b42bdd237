"""Dataset files and the seeded synthetic generator.

File layout of a dataset directory::

    transactions.csv   from,to,timestamp,value
    opcodes.tsv        account_id <TAB> space-separated mnemonics (contracts only)
    labels.csv         account_id,label   (1 = Ponzi, 0 = normal)
    manifest.json      paths, counts, seed

Synthetic opcode streams are drawn from per-scheme mnemonic templates.
They carry distributional signal only and are not compiled EVM code.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError
from .numerics import make_rng
from .txgraph import NORMAL, PONZI, Account, AccountKind, TransactionEvent

log = logging.getLogger(__name__)

TX_HEADER = ["from", "to", "timestamp", "value"]
LABEL_HEADER = ["account_id", "label"]


class SchemeKind(str, Enum):
    ARRAY_PYRAMID = "ArrayPyramid"
    TREE_PYRAMID = "TreePyramid"
    HANDOVER = "Handover"
    WATERFALL = "Waterfall"
    NORMAL = "Normal"

    @property
    def is_ponzi(self) -> bool:
        return self is not SchemeKind.NORMAL


PONZI_SCHEMES = [s for s in SchemeKind if s.is_ponzi]


# ---------------------------------------------------------------------------
# Loading


def load_transactions(path, strict: bool = True, errors: Optional[list] = None) -> list:
    """Parse ``from,to,timestamp,value`` rows in file order.

    In lenient mode malformed rows are skipped; ``(line, message)`` pairs
    are appended to ``errors`` when given.
    """
    events = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return events
        if [h.strip() for h in header] != TX_HEADER:
            raise DataError(f"{path}:1: expected header {','.join(TX_HEADER)}")
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            try:
                if len(row) != 4:
                    raise ValueError(f"expected 4 fields, got {len(row)}")
                src, dst, ts, val = (c.strip() for c in row)
                if not src or not dst:
                    raise ValueError("empty account id")
                try:
                    ts = int(ts)
                except ValueError:
                    raise ValueError(f"non-integer timestamp {ts!r}") from None
                events.append(TransactionEvent(src, dst, ts, float(val)))
            except (ValueError, DataError) as exc:
                msg = f"{path}:{line}: {exc}"
                if strict:
                    raise DataError(msg) from None
                log.warning("skipping %s", msg)
                if errors is not None:
                    errors.append((line, str(exc)))
    return events


def load_opcodes_and_labels(opcodes_path, labels_path=None) -> list:
    """Contract accounts from the opcode TSV, labelled from the labels CSV."""
    contracts: dict = {}
    with open(opcodes_path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            raw = raw.rstrip("\n")
            if not raw.strip():
                continue
            acc_id, sep, ops = raw.partition("\t")
            acc_id = acc_id.strip()
            if not sep or not acc_id:
                raise DataError(f"{opcodes_path}:{line_no}: expected 'account_id<TAB>opcodes'")
            if acc_id in contracts:
                raise DataError(f"{opcodes_path}:{line_no}: duplicate account {acc_id}")
            opcodes = tuple(ops.split())
            if not opcodes:
                raise DataError(f"{opcodes_path}:{line_no}: contract {acc_id} has no opcodes")
            contracts[acc_id] = opcodes
    labels: dict = {}
    if labels_path is not None:
        with open(labels_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is not None and [h.strip() for h in header] != LABEL_HEADER:
                raise DataError(f"{labels_path}:1: expected header {','.join(LABEL_HEADER)}")
            for row in reader:
                if not row:
                    continue
                line = reader.line_num
                if len(row) != 2 or row[1].strip() not in ("0", "1"):
                    raise DataError(f"{labels_path}:{line}: expected 'account_id,0|1'")
                acc_id = row[0].strip()
                if acc_id not in contracts:
                    raise DataError(f"{labels_path}:{line}: label for unknown contract {acc_id}")
                if acc_id in labels:
                    raise DataError(f"{labels_path}:{line}: duplicate account {acc_id}")
                labels[acc_id] = int(row[1])
    return [Account(a, AccountKind.CONTRACT, ops, labels.get(a)) for a, ops in contracts.items()]


def write_dataset(out_dir, events, accounts, manifest_extra: Optional[dict] = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "transactions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TX_HEADER)
        for e in events:
            w.writerow([e.src, e.dst, e.timestamp, repr(float(e.value))])
    contracts = [a for a in accounts if a.is_contract]
    with open(out / "opcodes.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for a in contracts:
            fh.write(f"{a.id}\t{' '.join(a.opcodes)}\n")
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_HEADER)
        for a in contracts:
            if a.label is not None:
                w.writerow([a.id, a.label])
    manifest = {
        "transactions": "transactions.csv",
        "opcodes": "opcodes.tsv",
        "labels": "labels.csv",
        "counts": {
            "accounts": len({a.id for a in accounts} | {x for e in events for x in (e.src, e.dst)}),
            "contracts": len(contracts),
            "events": len(events),
            "positives": sum(1 for a in contracts if a.label == PONZI),
        },
    }
    manifest.update(manifest_extra or {})
    with open(out / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return out / "manifest.json"


def load_dataset(data_dir, strict: bool = True, errors: Optional[list] = None):
    """Return ``(events, accounts, manifest)`` for a dataset directory.

    In lenient mode skipped transaction rows are appended to ``errors``.
    """
    d = Path(data_dir)
    mpath = d / "manifest.json"
    if mpath.exists():
        with open(mpath, encoding="utf-8") as fh:
            manifest = json.load(fh)
    else:
        manifest = {"transactions": "transactions.csv", "opcodes": "opcodes.tsv", "labels": "labels.csv"}
    paths = {k: d / manifest[k] for k in ("transactions", "opcodes", "labels")}
    for k in ("transactions", "opcodes"):
        if not paths[k].exists():
            raise DataError(f"missing {k} file {paths[k]}")
    events = load_transactions(paths["transactions"], strict=strict, errors=errors)
    accounts = load_opcodes_and_labels(paths["opcodes"], paths["labels"] if paths["labels"].exists() else None)
    return events, accounts, manifest


# ---------------------------------------------------------------------------
# Synthetic generator

BASE_OPCODES = (
    "PUSH1", "PUSH2", "PUSH4", "PUSH20", "DUP1", "DUP2", "DUP3", "SWAP1", "SWAP2", "POP",
    "MSTORE", "MLOAD", "JUMPDEST", "JUMP", "JUMPI", "ADD", "SUB", "MUL", "DIV", "AND",
    "OR", "ISZERO", "EQ", "LT", "GT", "CALLDATALOAD", "CALLDATASIZE", "RETURN", "STOP",
    "REVERT", "EXP", "NOT", "SHA3", "SLOAD", "SSTORE",
)

MOTIFS = {
    SchemeKind.ARRAY_PYRAMID: (
        ("CALLVALUE", "SLOAD", "PUSH1", "ADD", "SSTORE"),
        ("SLOAD", "DUP1", "SHA3", "SLOAD", "BALANCE", "GT", "JUMPI"),
        ("SLOAD", "SHA3", "SLOAD", "PUSH2", "GAS", "CALL"),
    ),
    SchemeKind.TREE_PYRAMID: (
        ("CALLVALUE", "CALLER", "SHA3", "SSTORE"),
        ("SHA3", "SLOAD", "DUP2", "SHA3", "SLOAD", "GAS", "CALL"),
        ("DUP1", "ISZERO", "JUMPI", "SHA3", "SLOAD", "JUMP"),
    ),
    SchemeKind.HANDOVER: (
        ("CALLVALUE", "SLOAD", "PUSH1", "MUL", "DIV", "LT", "JUMPI"),
        ("SLOAD", "GAS", "CALL", "CALLER", "SSTORE"),
        ("CALLVALUE", "SSTORE", "TIMESTAMP", "SSTORE"),
    ),
    SchemeKind.WATERFALL: (
        ("CALLVALUE", "DUP1", "SLOAD", "LT", "JUMPI"),
        ("SHA3", "SLOAD", "PUSH1", "MUL", "DIV", "GAS", "CALL"),
        ("DUP1", "SUB", "SWAP1", "ADD", "DUP1", "SLOAD", "LT", "JUMPI"),
    ),
    SchemeKind.NORMAL: (
        ("CALLDATALOAD", "SHA3", "SLOAD", "SUB", "SSTORE", "LOG3"),
        ("CALLER", "ORIGIN", "EQ", "ISZERO", "JUMPI", "REVERT"),
        ("CALLDATALOAD", "PUSH20", "AND", "EXTCODESIZE", "ISZERO", "JUMPI"),
        ("NUMBER", "BLOCKHASH", "TIMESTAMP", "XOR", "MOD"),
        ("CALLER", "SLOAD", "EQ", "JUMPI", "SELFDESTRUCT"),
        ("LOG1", "MLOAD", "RETURN"),
    ),
}


@dataclass
class SyntheticParams:
    contract_id: str = "0xc0"
    start_time: int = 1
    max_gap: int = 6  # deposit inter-arrival ticks drawn from 1..max_gap
    interest: float = 0.1  # handover: fixed interest on the previous deposit
    array_multiplier: float = 1.5  # array pyramid: payout owed per unit invested
    tree_shares: tuple = (0.5, 0.25, 0.125)  # tree pyramid: share per ancestor level
    waterfall_rate: float = 0.25  # waterfall: fraction of each investment paid per round
    normal_out_rate: float = 0.6  # normal: contract-initiated transfers per user
    opcode_len: tuple = (60, 160)
    motif_rate: float = 0.35  # probability the next chunk is a template motif
    motif_noise: float = 0.15  # probability a motif comes from a foreign template
    investors: Optional[list] = None  # explicit investor ids, else generated

    def validate(self):
        lo, hi = self.opcode_len
        if not (1 <= lo <= hi):
            raise ConfigError("opcode_len must satisfy 1 <= lo <= hi")
        if self.max_gap < 1 or not (0 <= self.motif_rate <= 1) or not (0 <= self.motif_noise <= 1):
            raise ConfigError("invalid synthetic parameters")


def _amount(rng) -> float:
    return round(float(rng.uniform(0.5, 5.0)), 4)


def synthetic_opcodes(scheme: SchemeKind, rng: np.random.Generator, params: SyntheticParams) -> tuple:
    lo, hi = params.opcode_len
    n = int(rng.integers(lo, hi + 1))
    own = MOTIFS[scheme]
    foreign = [m for s, ms in MOTIFS.items() if s is not scheme for m in ms]
    out: list = []
    while len(out) < n:
        if rng.random() < params.motif_rate:
            pool = foreign if rng.random() < params.motif_noise else own
            out.extend(pool[int(rng.integers(len(pool)))])
        else:
            out.append(BASE_OPCODES[int(rng.integers(len(BASE_OPCODES)))])
    return tuple(out[:n])


def generate_synthetic(scheme, n_investors: int, seed: int, params: Optional[SyntheticParams] = None):
    """One contract plus ``n_investors`` EOAs following ``scheme``.

    Returns ``(events, accounts, labels)`` where ``labels`` maps the
    contract id to 1 (Ponzi) or 0.
    """
    scheme = SchemeKind(scheme)
    params = params or SyntheticParams()
    params.validate()
    if n_investors < 2:
        raise ConfigError("n_investors must be >= 2")
    rng = make_rng(seed)
    c = params.contract_id
    inv = list(params.investors) if params.investors is not None else [f"{c}_u{j}" for j in range(n_investors)]
    if len(inv) != n_investors or len(set(inv)) != n_investors or c in inv:
        raise ConfigError("investor ids must be distinct, non-contract, and n_investors long")
    events: list = []
    t = params.start_time
    deposits: list = []

    def pay(j, amount):
        events.append(TransactionEvent(c, inv[j], t, round(float(amount), 6)))

    if scheme is SchemeKind.NORMAL:
        # independent user calls and contract transfers with no payout structure
        users_in = [(j, t + int(rng.integers(0, n_investors * params.max_gap))) for j in range(n_investors)]
        extra = int(rng.integers(0, n_investors // 2 + 1))
        users_in += [(int(rng.integers(n_investors)), t + int(rng.integers(0, n_investors * params.max_gap)))
                     for _ in range(extra)]
        n_out = int(round(params.normal_out_rate * n_investors))
        outs = [(int(rng.integers(n_investors)), t + int(rng.integers(0, n_investors * params.max_gap)))
                for _ in range(n_out)]
        merged = [(ts, 0, j) for j, ts in users_in] + [(ts, 1, j) for j, ts in outs]
        merged.sort(key=lambda x: x[0])
        for ts, direction, j in merged:
            if direction == 0:
                events.append(TransactionEvent(inv[j], c, ts, _amount(rng)))
            else:
                events.append(TransactionEvent(c, inv[j], ts, _amount(rng)))
    else:
        balance = 0.0
        owed: list = []
        nxt = 0  # array pyramid: next investor in arrival order awaiting payout
        parent: list = []
        for j in range(n_investors):
            if j:
                t += int(rng.integers(1, params.max_gap + 1))
            if scheme is SchemeKind.HANDOVER and j:
                amount = round(deposits[-1] * (1.0 + params.interest), 6)
            else:
                amount = _amount(rng)
            deposits.append(amount)
            events.append(TransactionEvent(inv[j], c, t, amount))
            if scheme is SchemeKind.ARRAY_PYRAMID:
                balance += amount
                owed.append(amount * params.array_multiplier)
                while nxt < j and balance >= owed[nxt]:
                    pay(nxt, owed[nxt])
                    balance -= owed[nxt]
                    nxt += 1
            elif scheme is SchemeKind.TREE_PYRAMID:
                parent.append(-1 if j == 0 else int(rng.integers(j)))
                a = parent[j]
                for share in params.tree_shares:
                    if a < 0:
                        break
                    pay(a, amount * share)
                    a = parent[a]
            elif scheme is SchemeKind.HANDOVER:
                if j:
                    pay(j - 1, amount)
            elif scheme is SchemeKind.WATERFALL:
                remaining = amount
                for i in range(j):
                    if remaining <= 1e-12:
                        break
                    part = min(params.waterfall_rate * deposits[i], remaining)
                    pay(i, part)
                    remaining -= part
    opcodes = synthetic_opcodes(scheme, rng, params)
    label = PONZI if scheme.is_ponzi else NORMAL
    accounts = [Account(c, AccountKind.CONTRACT, opcodes, label)] + [Account(u) for u in inv]
    return events, accounts, {c: label}


RECIPES = {
    # 200 contracts: 10 per Ponzi scheme, 160 normal, ~30 investors each
    "default": {"per_scheme": 10, "normal": 160, "investors": (20, 40), "shared_pool": 200, "shared_rate": 0.1},
    "small": {"per_scheme": 4, "normal": 24, "investors": (8, 14), "shared_pool": 30, "shared_rate": 0.1},
    "tiny": {"per_scheme": 2, "normal": 8, "investors": (4, 7), "shared_pool": 8, "shared_rate": 0.1},
}


@dataclass
class Dataset:
    events: list
    accounts: list
    labels: dict
    schemes: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def generate_recipe(recipe="default", seed: int = 7, opcode_len=(60, 160)) -> Dataset:
    """Compose many synthetic contracts into one transaction network.

    A fraction of investor slots is filled from a shared pool of EOAs so
    contracts are linked through common users. Start times are staggered
    so activity interleaves.
    """
    rec = dict(RECIPES[recipe]) if isinstance(recipe, str) else dict(recipe)
    rng = make_rng(seed, 0)
    plan = [s for s in PONZI_SCHEMES for _ in range(rec["per_scheme"])] + [SchemeKind.NORMAL] * rec["normal"]
    order = rng.permutation(len(plan))
    pool = [f"0xp{k:04d}" for k in range(rec["shared_pool"])]
    lo, hi = rec["investors"]
    events: list = []
    accounts: dict = {}
    labels: dict = {}
    schemes: dict = {}
    for n, k in enumerate(order):
        scheme = plan[k]
        cid = f"0xc{n:04d}"
        n_inv = int(rng.integers(lo, hi + 1))
        inv = [f"{cid}_u{j}" for j in range(n_inv)]
        shared = rng.random(n_inv) < rec["shared_rate"]
        picks = rng.choice(len(pool), size=n_inv, replace=False) if pool else []
        inv = [pool[picks[j]] if shared[j] else inv[j] for j in range(n_inv)]
        params = SyntheticParams(contract_id=cid, start_time=int(rng.integers(1, 2000)),
                                 investors=inv, opcode_len=tuple(opcode_len))
        ev, acc, lab = generate_synthetic(scheme, n_inv, int(rng.integers(2 ** 32)), params)
        events.extend(ev)
        for a in acc:
            accounts.setdefault(a.id, a)
        labels.update(lab)
        schemes[cid] = scheme.value
    events.sort(key=lambda e: e.timestamp)
    meta = {"recipe": recipe if isinstance(recipe, str) else "custom", "seed": seed,
            "scheme_counts": {s.value: sum(1 for p in plan if p is s) for s in SchemeKind}}
    return Dataset(events, list(accounts.values()), labels, schemes, meta)


def write_synthetic(out_dir, recipe="default", seed: int = 7) -> Path:
    ds = generate_recipe(recipe, seed)
    return write_dataset(out_dir, ds.events, ds.accounts,
                         {"seed": seed, "recipe": ds.meta["recipe"], "schemes": ds.schemes})
