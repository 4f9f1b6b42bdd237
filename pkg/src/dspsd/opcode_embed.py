"""Opcode-based account embedding: CNN control-logic features plus mutual attention.

An account's opcode sequence is looked up in a trainable lexicon, stacked
into an ``L_max x d'`` matrix, and convolved into ``C`` of shape
``d_o x l`` (``l = L_max - r + 1``). For a pair of accounts the correlation
``D = tanh(C_v^T A C_u)`` is max-pooled along each axis and softmax
normalized, giving attention over each side's windows.

Training works on an equivalent compressed form (:class:`Encoded`): every
window lying entirely in the zero padding produces the same column
``tanh(b)``, so those windows collapse into one column with a
multiplicity count. Max pooling is unaffected by duplicates and the
softmax takes the counts into account, so outputs and gradients match the
uncompressed computation exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .numerics import log_sigmoid, sigmoid, uniform_init

UNK = "<unk>"
EOA_KEY = ""


@dataclass
class OpcodeLexicon:
    tokens: list
    vectors: np.ndarray

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != UNK:
            raise ValueError("lexicon token 0 must be the unknown token")
        self._index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, sequences: Iterable, dim: int, rng: np.random.Generator):
        seen = sorted({op for seq in sequences for op in seq})
        tokens = [UNK] + seen
        return cls(tokens, uniform_init(rng, (len(tokens), dim)))

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def ids(self, opcodes) -> np.ndarray:
        get = self._index.get
        return np.fromiter((get(op, 0) for op in opcodes), dtype=np.int64)

    def lookup(self, op) -> np.ndarray:
        return self.vectors[self._index.get(op, 0)]


@dataclass
class OpcodeModel:
    lexicon: OpcodeLexicon
    filters: np.ndarray  # (d_o, r, d')
    bias: np.ndarray  # (d_o,)
    attn: np.ndarray  # (d_o, d_o)
    max_len: int = 300

    def __post_init__(self):
        d_o, r, dp = self.filters.shape
        if self.bias.shape != (d_o,) or self.attn.shape != (d_o, d_o):
            raise ShapeError("filter bank, bias and attentive matrix disagree")
        if dp != self.lexicon.dim:
            raise ShapeError("filter depth must equal lexicon dimension")
        if self.max_len < r:
            raise ShapeError(f"L_max={self.max_len} < filter width {r}")

    @classmethod
    def init(cls, sequences, rng: np.random.Generator, dim: int = 100, n_filters: int = 100,
             width: int = 2, max_len: int = 300):
        lex = OpcodeLexicon.build(sequences, dim, rng)
        return cls(
            lexicon=lex,
            filters=uniform_init(rng, (n_filters, width, dim)),
            bias=uniform_init(rng, (n_filters,)),
            attn=uniform_init(rng, (n_filters, n_filters)),
            max_len=max_len,
        )

    @property
    def n_filters(self) -> int:
        return self.filters.shape[0]

    @property
    def width(self) -> int:
        return self.filters.shape[1]

    @property
    def n_windows(self) -> int:
        return self.max_len - self.width + 1

    def params(self) -> dict:
        return {"lexicon": self.lexicon.vectors, "filters": self.filters,
                "bias": self.bias, "attn": self.attn}

    def zero_grads(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.params().items()}

    def copy(self) -> "OpcodeModel":
        lex = OpcodeLexicon(list(self.lexicon.tokens), self.lexicon.vectors.copy())
        return OpcodeModel(lex, self.filters.copy(), self.bias.copy(), self.attn.copy(), self.max_len)


# ---------------------------------------------------------------------------
# Uncompressed reference operations


def control_logic_matrix(opcodes, lexicon: OpcodeLexicon, max_len: int = 300) -> np.ndarray:
    """Stack lexicon vectors of the first ``max_len`` opcodes; zero rows after.

    ``opcodes`` may be an :class:`~dspsd.txgraph.Account` (EOAs have none).
    """
    opcodes = getattr(opcodes, "opcodes", opcodes)
    X = np.zeros((max_len, lexicon.dim))
    ids = lexicon.ids(list(opcodes)[:max_len])
    X[: len(ids)] = lexicon.vectors[ids]
    return X


def _windows(X: np.ndarray, width: int, count: int) -> np.ndarray:
    return np.concatenate([X[k:k + count] for k in range(width)], axis=1)


def convolve_features(X: np.ndarray, filters: np.ndarray, bias: np.ndarray, f=np.tanh) -> np.ndarray:
    """Feature maps ``C[j, i] = f(sum(F_j * X[i:i+r]) + b_j)``, shape ``d_o x (L - r + 1)``."""
    d_o, r, dp = filters.shape
    L = X.shape[0]
    if X.shape[1] != dp:
        raise ShapeError(f"X has width {X.shape[1]}, filters expect {dp}")
    if L < r:
        raise ShapeError(f"sequence length {L} shorter than filter width {r}")
    W = _windows(X, r, L - r + 1)
    return f(W @ filters.reshape(d_o, r * dp).T + bias).T


def _softmax_counts(s: np.ndarray, counts: Optional[np.ndarray]) -> np.ndarray:
    e = np.exp(s - s.max())
    if counts is not None:
        e = e * counts
    return e / e.sum()


def mutual_attention(Cv: np.ndarray, Cu: np.ndarray, A: np.ndarray,
                     counts_v: Optional[np.ndarray] = None, counts_u: Optional[np.ndarray] = None):
    """Attention between two feature matrices.

    Returns ``(a_v, a_u, D)``. ``a_u`` weights the columns of ``Cv`` (pooled
    over ``u``'s windows, so ``v(u) = Cv @ a_u``) and ``a_v`` weights the
    columns of ``Cu``.
    """
    if Cv.shape[0] != Cu.shape[0] or A.shape != (Cv.shape[0], Cv.shape[0]):
        raise ShapeError(f"mutual_attention: {Cv.shape}, {Cu.shape}, A {A.shape}")
    D = np.tanh(Cv.T @ A @ Cu)
    a_u = _softmax_counts(D.max(axis=1), counts_v)
    a_v = _softmax_counts(D.max(axis=0), counts_u)
    return a_v, a_u, D


def interactive_embedding(C: np.ndarray, a: np.ndarray) -> np.ndarray:
    if C.shape[1] != a.shape[0]:
        raise ShapeError(f"attention of length {a.shape[0]} for {C.shape[1]} windows")
    return C @ a


def aggregate_opcode_embedding(vectors, dim: Optional[int] = None) -> np.ndarray:
    """Mean of the interactive-account-aware vectors ``v(u_j)``.

    An empty set (no events yet) gives the zero vector of length ``dim``.
    """
    vectors = [np.asarray(v, dtype=np.float64).reshape(-1) for v in vectors]
    if not vectors:
        if dim is None:
            raise ValueError("dim is required for an empty interactive set")
        return np.zeros(dim)
    return np.mean(vectors, axis=0)


# ---------------------------------------------------------------------------
# Compressed encoding with backward passes
#
# The convolution is evaluated through per-token projections
# ``P_k = E @ F[:, k, :]^T`` (one row per lexicon token plus a zero row for
# padding), so a window's pre-activation is ``b + sum_k P_k[token_{i+k}]``.


def token_projections(model: OpcodeModel) -> np.ndarray:
    """Array of shape (r, V + 1, d_o); row V is the zero padding token."""
    E = model.lexicon.vectors
    r = model.width
    P = np.zeros((r, E.shape[0] + 1, model.n_filters))
    for k in range(r):
        P[k, :-1] = E @ model.filters[:, k, :].T
    return P


@dataclass
class Encoded:
    C: np.ndarray  # (d_o, m)
    counts: np.ndarray  # (m,)
    n_real: int  # leading columns backed by windows touching real opcodes
    tokens: np.ndarray  # (n_real, r) token ids per window, V = padding
    Q: Optional[np.ndarray] = field(default=None, repr=False)  # C^T A

    def expanded(self) -> np.ndarray:
        return np.repeat(self.C, self.counts.astype(np.int64), axis=1)


def encode(model: OpcodeModel, opcodes, proj: Optional[np.ndarray] = None,
           ids: Optional[np.ndarray] = None) -> Encoded:
    """Compressed feature matrix of one account (``ids`` skips the lexicon lookup)."""
    if proj is None:
        proj = token_projections(model)
    r, l = model.width, model.n_windows
    pad = proj.shape[1] - 1
    if ids is None:
        opcodes = getattr(opcodes, "opcodes", opcodes)
        ids = model.lexicon.ids(list(opcodes)[: model.max_len])
    n_real = min(len(ids), l)
    padded = np.full(n_real + r - 1, pad, dtype=np.int64)
    padded[: len(ids)] = ids[: n_real + r - 1]
    tokens = np.stack([padded[k:k + n_real] for k in range(r)], axis=1)
    pre = np.broadcast_to(model.bias, (n_real, model.n_filters)).copy()
    for k in range(r):
        pre += proj[k, tokens[:, k]]
    cols = [np.tanh(pre).T]
    counts = [np.ones(n_real)]
    if l > n_real:
        cols.append(np.tanh(model.bias)[:, None])
        counts.append([float(l - n_real)])
    return Encoded(np.concatenate(cols, axis=1), np.concatenate(counts), n_real, tokens)


def scatter_cols(V: np.ndarray, idx: np.ndarray, n: int) -> np.ndarray:
    """``out[:, idx[j]] += V[:, j]`` for an output with ``n`` columns."""
    d = V.shape[0]
    if n == 1:
        return V.sum(axis=1, keepdims=True)
    if V.shape[1] == 1:
        out = np.zeros((d, n))
        out[:, idx[0]] = V[:, 0]
        return out
    flat = (idx[None, :] + n * np.arange(d)[:, None]).ravel()
    return np.bincount(flat, weights=V.ravel(), minlength=d * n).reshape(d, n)


def encode_backward(encs, dCs, dproj: np.ndarray, grads: dict) -> None:
    """Accumulate ``dC`` of several encodings into bias and token-projection gradients."""
    reals, toks = [], []
    for enc, dC in zip(encs, dCs):
        dpre = dC * (1.0 - enc.C ** 2)
        grads["bias"] += dpre.sum(axis=1)
        if enc.n_real:
            reals.append(dpre[:, : enc.n_real])
            toks.append(enc.tokens)
    if not reals:
        return
    dreal = np.concatenate(reals, axis=1)
    tokens = np.concatenate(toks, axis=0)
    for k in range(dproj.shape[0]):
        dproj[k] += scatter_cols(dreal, tokens[:, k], dproj.shape[1]).T


def projection_backward(model: OpcodeModel, dproj: np.ndarray, grads: dict) -> None:
    E = model.lexicon.vectors
    for k in range(model.width):
        dP = dproj[k, :-1]  # (V, d_o); the padding row has no parameters
        grads["filters"][:, k, :] += dP.T @ E
        grads["lexicon"] += dP @ model.filters[:, k, :]


@dataclass
class PairResult:
    v_u: np.ndarray  # v's representation aware of u
    u_v: np.ndarray  # u's representation aware of v
    a_u: np.ndarray
    a_v: np.ndarray
    row_arg: np.ndarray
    col_arg: np.ndarray
    raw_u: np.ndarray
    raw_v: np.ndarray

    @property
    def score(self) -> float:
        return float(self.v_u @ self.u_v)


def _q(enc: Encoded, A: np.ndarray) -> np.ndarray:
    if enc.Q is None:
        enc.Q = enc.C.T @ A
    return enc.Q


def pair_forward(ev: Encoded, eu: Encoded, A: np.ndarray) -> PairResult:
    M = _q(ev, A) @ eu.C
    row_arg = M.argmax(axis=1)
    col_arg = M.argmax(axis=0)
    raw_u = np.tanh(M[np.arange(M.shape[0]), row_arg])
    raw_v = np.tanh(M[col_arg, np.arange(M.shape[1])])
    a_u = _softmax_counts(raw_u, ev.counts)
    a_v = _softmax_counts(raw_v, eu.counts)
    return PairResult(ev.C @ a_u, eu.C @ a_v, a_u, a_v, row_arg, col_arg, raw_u, raw_v)


def pair_backward(ev: Encoded, eu: Encoded, A: np.ndarray, res: PairResult,
                  d_vu: np.ndarray, d_uv: np.ndarray, dCv: np.ndarray, dCu: np.ndarray,
                  Gv: np.ndarray) -> None:
    """Backpropagate gradients on ``v(u)`` and ``u(v)``.

    With ``M = Cv^T A Cu`` the A-dependent terms are left in
    ``Gv = Cu dM^T``: the caller adds ``A @ Gv`` to ``dCv`` and
    ``Cv @ Gv^T`` to ``dA``, which lets them be batched per account.
    """
    dCv += d_vu[:, None] * res.a_u
    dCu += d_uv[:, None] * res.a_v
    da_u = ev.C.T @ d_vu
    da_v = eu.C.T @ d_uv
    g1 = res.a_u * (da_u - res.a_u @ da_u) * (1.0 - res.raw_u ** 2)  # dM[m, row_arg[m]]
    g2 = res.a_v * (da_v - res.a_v @ da_v) * (1.0 - res.raw_v ** 2)  # dM[col_arg[n], n]
    # dM holds one entry per row (at its max) and one per column
    dM = np.zeros((len(g1), len(g2)))
    dM[np.arange(len(g1)), res.row_arg] = g1
    dM[res.col_arg, np.arange(len(g2))] += g2
    Gv += eu.C @ dM.T
    dCu += _q(ev, A).T @ dM


# ---------------------------------------------------------------------------
# Losses


class PairCache:
    """Encodings and pair results for one fixed parameter state.

    ``key_of`` maps node -> feature key; nodes sharing a key (all EOAs)
    share one encoding.
    """

    def __init__(self, model: OpcodeModel, opcodes_of, key_of, ids_cache: Optional[dict] = None):
        self.model = model
        self.opcodes_of = opcodes_of
        self.key_of = key_of
        # token ids depend only on the (fixed) lexicon, so callers may share them
        self.ids_cache = {} if ids_cache is None else ids_cache
        self.enc: dict = {}
        self.pairs: dict = {}
        self._proj = None

    @property
    def proj(self) -> np.ndarray:
        if self._proj is None:
            self._proj = token_projections(self.model)
        return self._proj

    def encoding(self, key) -> Encoded:
        e = self.enc.get(key)
        if e is None:
            ids = self.ids_cache.get(key)
            if ids is None:
                ids = self.ids_cache[key] = self.model.lexicon.ids(list(self.opcodes_of(key))[: self.model.max_len])
            e = self.enc[key] = encode(self.model, None, self.proj, ids)
        return e

    def prepare(self, keys) -> None:
        """Encode ``keys`` and compute their ``C^T A`` in one product."""
        todo = [k for k in dict.fromkeys(keys) if k not in self.enc or self.enc[k].Q is None]
        if not todo:
            return
        encs = [self.encoding(k) for k in todo]
        Q = np.concatenate([e.C for e in encs], axis=1).T @ self.model.attn
        lo = 0
        for e in encs:
            e.Q = Q[lo:lo + e.C.shape[1]]
            lo += e.C.shape[1]

    def pair(self, kv, ku) -> PairResult:
        """Result for the ordered pair; the attention matrix is not symmetric, so (v, u) != (u, v)."""
        res = self.pairs.get((kv, ku))
        if res is None:
            res = self.pairs[kv, ku] = pair_forward(self.encoding(kv), self.encoding(ku), self.model.attn)
        return res

    def aware(self, kv, ku) -> np.ndarray:
        """``v(u)``: v's representation given counterpart u."""
        return self.pair(kv, ku).v_u

    def score(self, kv, ku) -> float:
        return self.pair(kv, ku).score

    def backward(self, dscore: dict, grads: dict) -> None:
        """Backprop ``{(kv, ku): dL/dscore}`` into ``grads``."""
        A = self.model.attn
        dC: dict = {}
        G: dict = {}
        for ck, ds in dscore.items():
            if ds == 0.0:
                continue
            res = self.pairs[ck]
            ev, eu = self.encoding(ck[0]), self.encoding(ck[1])
            for k, e in ((ck[0], ev), (ck[1], eu)):
                if k not in dC:
                    dC[k] = np.zeros_like(e.C)
            if ck[0] not in G:
                G[ck[0]] = np.zeros_like(ev.C)
            dv, du, gv = dC[ck[0]], dC[ck[1]], G[ck[0]]
            pair_backward(ev, eu, A, res, ds * res.u_v, ds * res.v_u, dv, du, gv)
        if not dC:
            return
        gkeys = sorted(G)
        if gkeys:
            G_all = np.concatenate([G[k] for k in gkeys], axis=1)
            C_all = np.concatenate([self.enc[k].C for k in gkeys], axis=1)
            grads["attn"] += C_all @ G_all.T
            AG = A @ G_all
            lo = 0
            for k in gkeys:
                m = G[k].shape[1]
                dC[k] += AG[:, lo:lo + m]
                lo += m
        dproj = np.zeros_like(self.proj)
        keys = sorted(dC)
        encode_backward([self.enc[k] for k in keys], [dC[k] for k in keys], dproj, grads)
        projection_backward(self.model, dproj, grads)


def negsampled_terms(cache: PairCache, terms) -> tuple:
    """Loss of ``-w log sigmoid(sign * score)`` summed over ``(v, u, sign, w)`` terms.

    Returns ``(loss, {pair: dL/dscore})``.
    """
    keys, signs, weights = [], [], []
    for v, u, sign, w in terms:
        keys.append((cache.key_of(v), cache.key_of(u)))
        signs.append(sign)
        weights.append(w)
    uniq = sorted(set(keys))
    cache.prepare(ck[0] for ck in uniq)  # only the first key of a pair needs C^T A
    pos = {k: i for i, k in enumerate(uniq)}
    scores = np.array([cache.score(*k) for k in uniq])
    idx = np.array([pos[k] for k in keys], dtype=np.int64)
    sg = np.asarray(signs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    z = sg * scores[idx]
    loss = -np.sum(w * log_sigmoid(z))
    dterm = -w * sg * sigmoid(-z)
    dpair = np.zeros(len(uniq))
    np.add.at(dpair, idx, dterm)
    return float(loss), dict(zip(uniq, dpair))


def opcode_edge_loss(cache: PairCache, v, u, w: float, negatives) -> tuple:
    """Negative-sampled opcode loss for edge (v, u) with given negatives.

    Returns ``(loss, grads)`` with gradients for lexicon, filters, bias and A.
    """
    if len(negatives) < 1:
        raise ConfigError("need at least one negative")
    terms = [(v, u, 1.0, w)] + [(v, z, -1.0, w) for z in negatives]
    loss, dpair = negsampled_terms(cache, terms)
    grads = cache.model.zero_grads()
    cache.backward(dpair, grads)
    return loss, grads


def opcode_log_probs(cache: PairCache, v, candidates) -> np.ndarray:
    """log p(z(v) | v(z)) for every candidate z (full softmax over candidates)."""
    kv = cache.key_of(v)
    s = np.array([cache.score(kv, cache.key_of(z)) for z in candidates])
    m = s.max()
    return s - (m + np.log(np.exp(s - m).sum()))


def opcode_edge_loss_exact(cache: PairCache, v, u, w: float, candidates) -> tuple:
    """Full-softmax opcode edge loss (small graphs); returns ``(loss, grads)``."""
    candidates = list(candidates)
    if u not in candidates:
        raise ValueError(f"{u!r} is not a candidate")
    logp = opcode_log_probs(cache, v, candidates)
    loss = -w * logp[candidates.index(u)]
    kv = cache.key_of(v)
    dpair: dict = {}
    for z, lp in zip(candidates, logp):
        ck = (kv, cache.key_of(z))
        dpair[ck] = dpair.get(ck, 0.0) + w * np.exp(lp)
    ck = (kv, cache.key_of(u))
    dpair[ck] -= w
    grads = cache.model.zero_grads()
    cache.backward(dpair, grads)
    return float(loss), grads


def exact_opcode_loss(cache: PairCache, edges: dict, candidates) -> float:
    candidates = list(candidates)
    keys = [cache.key_of(z) for z in candidates]
    lse_by_key: dict = {}
    total = 0.0
    for (v, u), w in edges.items():
        kv = cache.key_of(v)
        if kv not in lse_by_key:
            s = np.array([cache.score(kv, kz) for kz in keys])
            m = s.max()
            lse_by_key[kv] = m + np.log(np.exp(s - m).sum())
        total -= w * (cache.score(kv, cache.key_of(u)) - lse_by_key[kv])
    return float(total)
