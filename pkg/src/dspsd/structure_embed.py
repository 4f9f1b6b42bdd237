"""Structure-based node vectors trained on weighted first-order proximity.

The probability of ``x`` given ``v`` is a softmax of ``x . v`` over the
node set. By default a single table plays both roles; ``use_context``
adds a separate context table for the generated side.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, NodeNotFoundError
from .numerics import log_sigmoid, sigmoid, uniform_init


@dataclass
class StructureTable:
    nodes: list
    vectors: np.ndarray
    context: Optional[np.ndarray] = None

    def __post_init__(self):
        self._index = {n: i for i, n in enumerate(self.nodes)}

    @classmethod
    def init(cls, nodes, dim: int, rng: np.random.Generator, use_context: bool = False):
        nodes = list(nodes)
        vec = uniform_init(rng, (len(nodes), dim))
        ctx = uniform_init(rng, (len(nodes), dim)) if use_context else None
        return cls(nodes, vec, ctx)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def ctx(self) -> np.ndarray:
        return self.vectors if self.context is None else self.context

    def idx(self, node) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise NodeNotFoundError(node) from None

    def vector(self, node) -> np.ndarray:
        return self.vectors[self.idx(node)]

    def copy(self) -> "StructureTable":
        return StructureTable(list(self.nodes), self.vectors.copy(),
                              None if self.context is None else self.context.copy())


def _candidates(table: StructureTable, nodes: Optional[Iterable]) -> np.ndarray:
    if nodes is None:
        return np.arange(len(table.nodes))
    cand = np.array(sorted(table.idx(n) for n in set(nodes)), dtype=np.int64)
    if cand.size == 0:
        raise ValueError("empty candidate node set")
    return cand


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    m = scores.max()
    return scores - (m + np.log(np.exp(scores - m).sum()))


def conditional_prob(v, x, table: StructureTable, nodes: Optional[Iterable] = None) -> float:
    """p(x | v) with the softmax denominator over ``nodes`` (default: all)."""
    cand = _candidates(table, nodes)
    vi, xi = table.idx(v), table.idx(x)
    where = np.flatnonzero(cand == xi)
    if where.size == 0:
        raise ValueError(f"{x!r} is not among the candidate nodes")
    logp = _log_softmax(table.ctx[cand] @ table.vectors[vi])
    return float(np.exp(logp[where[0]]))


def edge_loss_exact(v, x, w: float, table: StructureTable, nodes: Optional[Iterable] = None):
    """``-w log p(x|v)`` and its gradient.

    Returns ``(loss, grad_vectors, grad_context)``; ``grad_context`` is
    None when the table has no separate context matrix (its share is then
    already folded into ``grad_vectors``).
    """
    if w <= 0:
        raise ValueError("edge weight must be positive")
    cand = _candidates(table, nodes)
    vi, xi = table.idx(v), table.idx(x)
    where = np.flatnonzero(cand == xi)
    if where.size == 0:
        raise ValueError(f"{x!r} is not among the candidate nodes")
    E, C = table.vectors, table.ctx
    vv = E[vi]
    logp = _log_softmax(C[cand] @ vv)
    loss = -w * logp[where[0]]
    # dL/ds_z = w (p_z - [z == x])
    coef = w * np.exp(logp)
    coef[where[0]] -= w
    gE = np.zeros_like(E)
    gC = gE if table.context is None else np.zeros_like(C)
    gE[vi] += coef @ C[cand]
    np.add.at(gC, cand, coef[:, None] * vv[None, :])
    return float(loss), gE, (None if table.context is None else gC)


class NoiseDistribution:
    """Unigram noise over node indices, proportional to degree**power."""

    def __init__(self, weights, power: float = 0.75):
        w = np.asarray(weights, dtype=np.float64) ** power
        if w.sum() <= 0:
            raise ConfigError("noise distribution has no mass")
        self.probs = w / w.sum()
        self._cdf = np.cumsum(self.probs)
        self._cdf[-1] = 1.0

    @classmethod
    def from_graph(cls, graph, table: StructureTable, power: float = 0.75):
        deg = graph.degree()
        return cls([deg.get(n, 0) for n in table.nodes], power)

    def restricted(self, keep) -> "NoiseDistribution":
        w = np.zeros_like(self.probs)
        keep = np.asarray(list(keep), dtype=np.int64)
        w[keep] = self.probs[keep]
        return NoiseDistribution(w, power=1.0)

    def sample(self, rng: np.random.Generator, shape, exclude=None) -> np.ndarray:
        """Draw indices; ``exclude`` (broadcastable to ``shape``) is redrawn."""
        out = np.searchsorted(self._cdf, rng.random(shape), side="right")
        if exclude is None:
            return out
        excl = np.broadcast_to(np.asarray(exclude), out.shape)
        bad = out == excl
        if bad.any():
            if np.all(self.probs[np.unique(excl[bad])] >= 1.0 - 1e-15):
                raise ConfigError("noise distribution has no valid negative")
            for _ in range(1000):
                if not bad.any():
                    break
                out[bad] = np.searchsorted(self._cdf, rng.random(int(bad.sum())), side="right")
                bad = out == excl
            else:
                raise ConfigError("noise distribution has no valid negative")
        return out


def negsampled_batch(E: np.ndarray, C: np.ndarray, src, dst, negs, weights):
    """Negative-sampling loss for a batch of edges.

    ``negs`` has shape (B, k). Returns ``(loss, (rowsE, gradE), (rowsC, gradC))``
    as scatter lists; when ``C is E`` both lists address the same table.
    """
    src = np.asarray(src)
    dst = np.asarray(dst)
    negs = np.asarray(negs).reshape(len(src), -1)
    w = np.asarray(weights, dtype=np.float64)
    V, X, Z = E[src], C[dst], C[negs]
    pos = np.einsum("bd,bd->b", V, X)
    neg = np.einsum("bkd,bd->bk", Z, V)
    loss = -np.sum(w * (log_sigmoid(pos) + log_sigmoid(-neg).sum(axis=1)))
    dpos = -w * sigmoid(-pos)
    dneg = w[:, None] * sigmoid(neg)
    dV = dpos[:, None] * X + np.einsum("bk,bkd->bd", dneg, Z)
    dX = dpos[:, None] * V
    dZ = dneg[:, :, None] * V[:, None, :]
    rowsC = np.concatenate([dst, negs.reshape(-1)])
    gradC = np.concatenate([dX, dZ.reshape(-1, E.shape[1])])
    return float(loss), (src, dV), (rowsC, gradC)


def edge_loss_negsampled(v, x, w: float, table: StructureTable, k: int,
                         noise: NoiseDistribution, rng: np.random.Generator):
    """Negative-sampled surrogate of the edge loss for one edge.

    Returns ``(loss, grad_vectors, grad_context, negatives)`` with dense
    gradients, for inspection and gradient checks.
    """
    if k < 1:
        raise ConfigError("need at least one negative")
    vi, xi = table.idx(v), table.idx(x)
    negs = noise.sample(rng, (1, k), exclude=xi)
    loss, (rE, gE_rows), (rC, gC_rows) = negsampled_batch(
        table.vectors, table.ctx, [vi], [xi], negs, [w])
    gE = np.zeros_like(table.vectors)
    np.add.at(gE, rE, gE_rows)
    gC = gE if table.context is None else np.zeros_like(table.ctx)
    np.add.at(gC, rC, gC_rows)
    return loss, gE, (None if table.context is None else gC), negs[0]


def apply_scatter(param: np.ndarray, rows, grads, lr: float) -> None:
    np.add.at(param, rows, -lr * grads)


def exact_structure_loss(table: StructureTable, edges: dict, nodes: Optional[Iterable] = None,
                         chunk: int = 512) -> float:
    """Sum of ``-w log p(x|v)`` over weighted edges, exact denominators."""
    if not edges:
        return 0.0
    cand = _candidates(table, nodes)
    E, C = table.vectors, table.ctx
    Cc = C[cand]
    by_src: dict = {}
    for (s, d), w in edges.items():
        by_src.setdefault(table.idx(s), []).append((table.idx(d), w))
    srcs = np.array(sorted(by_src), dtype=np.int64)
    total = 0.0
    for lo in range(0, len(srcs), chunk):
        part = srcs[lo:lo + chunk]
        S = E[part] @ Cc.T
        m = S.max(axis=1, keepdims=True)
        lse = (m + np.log(np.exp(S - m).sum(axis=1, keepdims=True)))[:, 0]
        for row, si in enumerate(part):
            for di, w in by_src[si]:
                total -= w * (float(C[di] @ E[si]) - lse[row])
    return float(total)
