"""Two-stage training, node embedding and detection.

Stage 1 learns the structure table and the opcode encoder from the
transaction edges with negative-sampled SGD. Stage 2 freezes them, builds
each labelled contract's sequence of temporal-point embeddings, and
trains the LSTM and MLP on the labels.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .classifier import (ClassifierParams, classification_loss, loss_gradient, mlp_backward,
                         mlp_forward, predict)
from .errors import ConfigError, DataError, DSPSDError, NodeNotFoundError, ShapeError
from .numerics import LR_BOUNDS, make_rng
from .opcode_embed import EOA_KEY, OpcodeLexicon, OpcodeModel, PairCache, exact_opcode_loss, negsampled_terms
from .structure_embed import (NoiseDistribution, StructureTable, apply_scatter, exact_structure_loss,
                        negsampled_batch)
from .temporal import GATES, LSTMParams, compress_sequence, lstm_forward, lstm_gradients
from .txgraph import TemporalGraph

log = logging.getLogger(__name__)

FORMAT = "dspsd-model"
FORMAT_VERSION = 1
ABLATIONS = ("full", "structure_only", "opcode_only")
SCHEDULES = ("stream", "snapshot")

# independent RNG sub-streams derived from TrainConfig.seed
_STREAM = {"structure": 1, "opcode": 2, "lstm": 3, "mlp": 4, "stage1": 10, "stage2": 20}


@dataclass
class TrainConfig:
    d_s: int = 100
    d_o: int = 100
    d_prime: int = 100
    r: int = 2
    L_max: int = 300
    lstm_hidden: int = 32
    seq_len: int = 32
    mlp_widths: tuple = (64, 32, 32)
    lr: float = 0.01
    batch_size: int = 64
    neg_k: int = 5
    lam: float = 1e-4
    epochs_stage1: int = 20
    epochs_stage2: int = 200
    seed: int = 7
    ablation: str = "full"
    dropout: float = 0.75
    noise_power: float = 0.75
    use_context: bool = False  # separate context table for structure vectors
    snapshot_negatives: bool = False  # draw negatives only from nodes seen so far
    finetune_structure: bool = False  # let stage 2 update the structure table
    reg_scope: str = "stage2"  # "stage2": LSTM+MLP weights; "all": also the structure table
    lr_bounds: tuple = LR_BOUNDS
    schedule: str = "stream"  # "stream": one pass over events; "snapshot": one snapshot minibatch per event

    def __post_init__(self):
        self.mlp_widths = tuple(int(w) for w in self.mlp_widths)
        self.lr_bounds = tuple(float(b) for b in self.lr_bounds)

    def validate(self) -> "TrainConfig":
        for name in ("d_s", "d_o", "d_prime", "r", "L_max", "lstm_hidden", "seq_len", "batch_size", "neg_k"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs_stage1 < 0 or self.epochs_stage2 < 0:
            raise ConfigError("epoch counts must be >= 0")
        if self.L_max < self.r:
            raise ConfigError("L_max must be >= r")
        if not self.mlp_widths or any(w < 1 for w in self.mlp_widths):
            raise ConfigError("mlp_widths must be positive")
        lo, hi = self.lr_bounds
        if not (0 < lo <= self.lr <= hi):
            raise ConfigError(f"lr {self.lr} outside [{lo}, {hi}]")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}")
        if self.reg_scope not in ("stage2", "all"):
            raise ConfigError("reg_scope must be 'stage2' or 'all'")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp_widths"] = list(self.mlp_widths)
        d["lr_bounds"] = list(self.lr_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    @property
    def input_dim(self) -> int:
        return self.d_s + self.d_o


@dataclass
class ModelBundle:
    config: TrainConfig
    structure: StructureTable
    opcode: OpcodeModel
    lstm: LSTMParams
    classifier: ClassifierParams
    scaler: Optional["Scaler"] = None
    version: int = FORMAT_VERSION
    history: dict = field(default_factory=dict)

    def copy(self) -> "ModelBundle":
        return ModelBundle(TrainConfig.from_dict(self.config.to_dict()), self.structure.copy(),
                           self.opcode.copy(), self.lstm.copy(), self.classifier.copy(),
                           None if self.scaler is None else Scaler(self.scaler.mean.copy(), self.scaler.std.copy()),
                           self.version,
                           json.loads(json.dumps(self.history)))

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        s, o = self.structure, self.opcode
        return {
            "format": FORMAT,
            "version": self.version,
            "config": self.config.to_dict(),
            "structure": {
                "nodes": list(s.nodes),
                "vectors": s.vectors.tolist(),
                "context": None if s.context is None else s.context.tolist(),
            },
            "opcode": {
                "tokens": list(o.lexicon.tokens),
                "lexicon": o.lexicon.vectors.tolist(),
                "filters": o.filters.tolist(),
                "bias": o.bias.tolist(),
                "attn": o.attn.tolist(),
                "max_len": o.max_len,
            },
            "lstm": {**{k: v.tolist() for k, v in self.lstm.arrays().items()}, "dropout": self.lstm.dropout},
            "classifier": {
                "weights": [w.tolist() for w in self.classifier.weights],
                "biases": [b.tolist() for b in self.classifier.biases],
            },
            "scaler": None if self.scaler is None else {"mean": self.scaler.mean.tolist(),
                                                         "std": self.scaler.std.tolist()},
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != FORMAT:
            raise DataError("not a model file")
        if d.get("version") != FORMAT_VERSION:
            raise DataError(f"unsupported model version {d.get('version')}")
        arr = lambda x: np.asarray(x, dtype=np.float64)  # noqa: E731
        cfg = TrainConfig.from_dict(d["config"])
        s = d["structure"]
        table = StructureTable(list(s["nodes"]), arr(s["vectors"]).reshape(len(s["nodes"]), cfg.d_s),
                               None if s["context"] is None else arr(s["context"]))
        o = d["opcode"]
        opc = OpcodeModel(OpcodeLexicon(list(o["tokens"]), arr(o["lexicon"])), arr(o["filters"]),
                          arr(o["bias"]), arr(o["attn"]), int(o["max_len"]))
        lstm_d = d["lstm"]
        lstm = LSTMParams({g: arr(lstm_d[f"W_{g}"]) for g in GATES}, {g: arr(lstm_d[f"b_{g}"]) for g in GATES},
                          float(lstm_d["dropout"]))
        c = d["classifier"]
        clf = ClassifierParams([arr(w) for w in c["weights"]], [arr(b) for b in c["biases"]])
        sc = d.get("scaler")
        scaler = None if sc is None else Scaler(arr(sc["mean"]), arr(sc["std"]))
        return cls(cfg, table, opc, lstm, clf, scaler, d["version"], d.get("history", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"cannot read model {path}: {exc}") from None


def init_bundle(graph: TemporalGraph, config: TrainConfig) -> ModelBundle:
    config.validate()
    seed = config.seed
    table = StructureTable.init(graph.nodes, config.d_s, make_rng(seed, _STREAM["structure"]),
                                use_context=config.use_context)
    opc = OpcodeModel.init([a.opcodes for a in graph.contracts()], make_rng(seed, _STREAM["opcode"]),
                           dim=config.d_prime, n_filters=config.d_o, width=config.r, max_len=config.L_max)
    lstm = LSTMParams.init(config.input_dim, config.lstm_hidden, make_rng(seed, _STREAM["lstm"]), config.dropout)
    clf = ClassifierParams.init(config.lstm_hidden, config.mlp_widths, make_rng(seed, _STREAM["mlp"]))
    return ModelBundle(config, table, opc, lstm, clf)


def feature_key(graph: TemporalGraph, node) -> str:
    """Opcode feature key: the account id for contracts, shared key for EOAs."""
    acc = graph.accounts.get(node)
    return node if acc is not None and acc.is_contract else EOA_KEY


def pair_cache(bundle: ModelBundle, graph: TemporalGraph, key_of: Optional[Callable] = None) -> PairCache:
    def opcodes_of(key):
        return () if key == EOA_KEY else graph.accounts[key].opcodes

    return PairCache(bundle.opcode, opcodes_of, key_of or (lambda n: feature_key(graph, n)))


# ---------------------------------------------------------------------------
# Stage 1


def stage1_exact_loss(bundle: ModelBundle, graph: TemporalGraph, ablation: Optional[str] = None) -> float:
    """Full-softmax loss summed over the final graph's weighted edges."""
    ablation = ablation or bundle.config.ablation
    total = 0.0
    if ablation != "opcode_only":
        total += exact_structure_loss(bundle.structure, graph.edges)
    if ablation != "structure_only":
        total += exact_opcode_loss(pair_cache(bundle, graph), graph.edges, graph.nodes)
    return total


def _stage1_batches(n_events: int, bs: int, schedule: str, rng):
    """Yield ``(events seen so far, event indices)`` minibatches for one epoch.

    ``stream`` walks the events in consecutive chunks. ``snapshot`` visits
    each event once and pairs it with ``bs - 1`` edges drawn from the
    snapshot at that time; drawing earlier events uniformly samples
    snapshot edges in proportion to their weight.
    """
    if schedule == "stream":
        for lo in range(0, n_events, bs):
            hi = min(lo + bs, n_events)
            yield hi, np.arange(lo, hi)
    else:
        for i in range(n_events):
            yield i + 1, np.concatenate([[i], rng.integers(0, i + 1, bs - 1)])


def train_embeddings(graph: TemporalGraph, config: TrainConfig, bundle: Optional[ModelBundle] = None,
                     progress: Optional[Callable] = None) -> ModelBundle:
    """Stage 1: negative-sampled SGD over the event stream in timestamp order.

    With the ``stream`` schedule each event contributes its edge once per
    epoch with unit weight, so an epoch covers every edge ``w`` times in
    total; ``snapshot`` replays earlier edges as well (see
    ``_stage1_batches``). Negatives are shared by
    the structure and opcode terms. Structure rows take per-edge SGD steps
    (the batch sum); the shared opcode encoder steps on the batch mean.
    """
    config.validate()
    if not graph.events:
        raise DataError("cannot train embeddings on an empty graph")
    bundle = bundle or init_bundle(graph, config)
    if config.epochs_stage1 == 0:
        return bundle
    table, opc = bundle.structure, bundle.opcode
    idx = {n: i for i, n in enumerate(table.nodes)}
    try:
        src = np.array([idx[e.src] for e in graph.events], dtype=np.int64)
        dst = np.array([idx[e.dst] for e in graph.events], dtype=np.int64)
    except KeyError as exc:
        raise NodeNotFoundError(exc.args[0]) from None
    keys = [feature_key(graph, n) for n in table.nodes]
    noise = NoiseDistribution.from_graph(graph, table, config.noise_power)
    first_seen = np.full(len(table.nodes), len(src), dtype=np.int64)
    for pos in range(len(src) - 1, -1, -1):
        first_seen[src[pos]] = pos
        first_seen[dst[pos]] = pos
    rng = make_rng(config.seed, _STREAM["stage1"])
    lr, k, bs = config.lr, config.neg_k, config.batch_size
    use_s = config.ablation != "opcode_only"
    use_o = config.ablation != "structure_only"
    ids_cache: dict = {}
    history = bundle.history.setdefault("stage1", [])
    for epoch in range(config.epochs_stage1):
        tot_s = tot_o = 0.0
        for seen, pick in _stage1_batches(len(src), bs, config.schedule, rng):
            s, d = src[pick], dst[pick]
            dist = noise
            if config.snapshot_negatives:
                dist = noise.restricted(np.flatnonzero(first_seen < seen))
            negs = dist.sample(rng, (len(s), k), exclude=d[:, None])
            if use_s:
                loss, (rE, gE), (rC, gC) = negsampled_batch(table.vectors, table.ctx, s, d, negs, np.ones(len(s)))
                apply_scatter(table.vectors, rE, gE, lr)
                apply_scatter(table.ctx, rC, gC, lr)
                tot_s += loss
            if use_o:
                cache = PairCache(opc, lambda key: () if key == EOA_KEY else graph.accounts[key].opcodes,
                                  keys.__getitem__, ids_cache)
                terms = [(int(a), int(b), 1.0, 1.0) for a, b in zip(s, d)]
                terms += [(int(a), int(z), -1.0, 1.0) for a, row in zip(s, negs) for z in row]
                loss, dpair = negsampled_terms(cache, terms)
                grads = opc.zero_grads()
                cache.backward(dpair, grads)
                # encoder weights are shared by every term: step on the batch mean
                for name, p in opc.params().items():
                    p -= (lr / len(s)) * grads[name]
                tot_o += loss
        history.append({"epoch": epoch, "structure": tot_s, "opcode": tot_o})
        log.info("stage1 epoch %d: structure %.4f opcode %.4f", epoch, tot_s, tot_o)
        if progress:
            progress(epoch, tot_s, tot_o)
    return bundle


# ---------------------------------------------------------------------------
# Embedding


def _opcode_points(cache: PairCache, kv, seq, d_o: int) -> np.ndarray:
    out = np.zeros((len(seq), d_o))
    seen = set()
    acc = np.zeros(d_o)
    for i, (u, _) in enumerate(seq):
        if u not in seen:
            seen.add(u)
            acc = acc + cache.aware(kv, cache.key_of(u))
        out[i] = acc / len(seen)
    return out


def _formation(graph: TemporalGraph, v, upto: Optional[int]) -> list:
    if v not in graph.formation:
        raise NodeNotFoundError(v)
    return [(u, t) for u, t in graph.formation[v] if upto is None or t <= upto]


def temporal_points(bundle: ModelBundle, graph: TemporalGraph, v, cache: Optional[PairCache] = None,
                    upto: Optional[int] = None) -> np.ndarray:
    """Temporal-point embeddings ``[structure ; opcode]`` at each event of ``v``.

    The opcode part at event i is the mean of ``v(u)`` over the distinct
    counterparties seen up to and including event i. Events after ``upto``
    are ignored.
    """
    cfg = bundle.config
    seq = _formation(graph, v, upto)
    out = np.zeros((len(seq), cfg.input_dim))
    if not seq:
        return out
    if cfg.ablation != "opcode_only":
        out[:, : cfg.d_s] = bundle.structure.vector(v)
    if cfg.ablation != "structure_only":
        cache = cache or pair_cache(bundle, graph)
        out[:, cfg.d_s:] = _opcode_points(cache, cache.key_of(v), seq, cfg.d_o)
    return out


@dataclass
class Sequences:
    """Stage-2 inputs in split form.

    The structure part of a temporal point never changes along a sequence,
    so it is kept once per node (``static``) together with a mask of the
    real (non-padding) steps; ``dynamic`` holds the opcode part.
    """
    static: np.ndarray  # (N, d_s)
    dynamic: np.ndarray  # (N, T, d_o)
    mask: np.ndarray  # (N, T), 1.0 on real steps

    def __len__(self) -> int:
        return len(self.static)

    def __getitem__(self, idx) -> "Sequences":
        return Sequences(self.static[idx], self.dynamic[idx], self.mask[idx])

    def copy(self) -> "Sequences":
        return Sequences(self.static.copy(), self.dynamic.copy(), self.mask.copy())

    def dense(self) -> np.ndarray:
        return np.concatenate([self.mask[:, :, None] * self.static[:, None, :], self.dynamic], axis=2)

    @classmethod
    def from_dense(cls, X, d_s: int) -> "Sequences":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 2:
            X = X[None]
        mask = np.any(X != 0.0, axis=2).astype(np.float64)
        return cls(X[:, 0, :d_s].copy(), X[:, :, d_s:].copy(), mask)


def build_sequences(bundle: ModelBundle, graph: TemporalGraph, nodes, upto: Optional[int] = None) -> Sequences:
    """Compressed stage-2 inputs for ``nodes`` (see ``Sequences``)."""
    cfg = bundle.config
    nodes = list(nodes)
    T = cfg.seq_len
    static = np.zeros((len(nodes), cfg.d_s))
    dynamic = np.zeros((len(nodes), T, cfg.d_o))
    mask = np.zeros((len(nodes), T))
    cache = pair_cache(bundle, graph) if cfg.ablation != "structure_only" else None
    for n, v in enumerate(nodes):
        seq = _formation(graph, v, upto)
        if cfg.ablation != "opcode_only":
            static[n] = bundle.structure.vector(v)
        mask[n, : min(len(seq), T)] = 1.0
        if cache is not None and seq:
            pts = _opcode_points(cache, cache.key_of(v), seq, cfg.d_o)
            dynamic[n] = compress_sequence(pts, T, cfg.d_o)
    return Sequences(static, dynamic, mask)


def embed_sequences(bundle: ModelBundle, graph: TemporalGraph, nodes, upto: Optional[int] = None) -> np.ndarray:
    """Compressed input sequences, shape (len(nodes), seq_len, d_s + d_o)."""
    return build_sequences(bundle, graph, nodes, upto).dense()


@dataclass
class Scaler:
    """Per-feature standardization fitted on the real steps of training sequences."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, seqs: Sequences) -> "Scaler":
        w = seqs.mask.sum(axis=1)
        total = w.sum()
        if total == 0:
            d = seqs.static.shape[1] + seqs.dynamic.shape[2]
            return cls(np.zeros(d), np.ones(d))
        mu_s = w @ seqs.static / total
        var_s = w @ (seqs.static - mu_s) ** 2 / total
        m = seqs.mask[:, :, None]
        mu_d = (m * seqs.dynamic).sum(axis=(0, 1)) / total
        var_d = (m * (seqs.dynamic - mu_d) ** 2).sum(axis=(0, 1)) / total
        std = np.sqrt(np.concatenate([var_s, var_d]))
        std[std < 1e-12] = 1.0  # constant features are only centred
        return cls(np.concatenate([mu_s, mu_d]), std)

    def apply(self, seqs: Sequences) -> Sequences:
        d_s = seqs.static.shape[1]
        static = (seqs.static - self.mean[:d_s]) / self.std[:d_s]
        dynamic = (seqs.dynamic - self.mean[d_s:]) / self.std[d_s:] * seqs.mask[:, :, None]
        return Sequences(static, dynamic, seqs.mask)


def _as_sequences(bundle: ModelBundle, X) -> Sequences:
    return X if isinstance(X, Sequences) else Sequences.from_dense(X, bundle.config.d_s)


def _forward(bundle: ModelBundle, seqs: Sequences, dropout_active=False, rng=None):
    if bundle.scaler is not None:
        seqs = bundle.scaler.apply(seqs)
    return lstm_forward(seqs.dynamic, bundle.lstm, dropout_active, rng, static=seqs.static, mask=seqs.mask)


def embed_node(v, graph: TemporalGraph, bundle: ModelBundle, upto: Optional[int] = None) -> np.ndarray:
    """Overall embedding: final LSTM hidden state (dropout off)."""
    h, _ = _forward(bundle, build_sequences(bundle, graph, [v], upto))
    return h[0]


# ---------------------------------------------------------------------------
# Stage 2


def _reg_weights(bundle: ModelBundle) -> list:
    return bundle.lstm.weights() + list(bundle.classifier.weights)


def train_classifier(graph: TemporalGraph, labeled: dict, bundle: ModelBundle,
                     config: Optional[TrainConfig] = None, X=None,
                     progress: Optional[Callable] = None, fold: Optional[int] = None) -> ModelBundle:
    """Stage 2: fit LSTM + MLP on labelled contracts with minibatch SGD.

    ``labeled`` maps account id -> {0, 1}. ``X`` may carry precomputed
    sequences (``Sequences`` or a dense array) aligned with ``labeled``'s
    order. Inputs are standardized with a scaler fitted here and stored in
    the bundle. ``fold`` selects a separate random stream per CV fold.
    """
    config = (config or bundle.config).validate()
    ids = list(labeled)
    y = np.array([labeled[i] for i in ids], dtype=np.float64)
    if len(set(y.tolist())) < 2:
        raise ConfigError("training set needs at least one example of each class")
    raw = build_sequences(bundle, graph, ids) if X is None else _as_sequences(bundle, X).copy()
    if len(raw) != len(ids):
        raise ShapeError(f"{len(raw)} sequences for {len(ids)} labelled ids")
    bundle.scaler = scaler = Scaler.fit(raw)
    seqs = scaler.apply(raw)
    rng = make_rng(config.seed, _STREAM["stage2"], *(() if fold is None else (fold,)))
    lstm, clf = bundle.lstm, bundle.classifier
    lr, lam, bs = config.lr, config.lam, config.batch_size
    finetune = config.finetune_structure and config.ablation != "opcode_only"
    rows = np.array([bundle.structure.idx(i) for i in ids]) if finetune else None
    sd_s = scaler.std[: config.d_s]
    shrink = 1.0 / (1.0 + 2.0 * lr * lam)
    history = bundle.history.setdefault("stage2", [])
    for epoch in range(config.epochs_stage2):
        order = rng.permutation(len(ids))
        total = 0.0
        for lo in range(0, len(ids), bs):
            b = order[lo:lo + bs]
            hN, lcache = lstm_forward(seqs.dynamic[b], lstm, True, rng, static=seqs.static[b], mask=seqs.mask[b])
            margin, _, mcache = mlp_forward(hN, clf)
            total += classification_loss(margin, y[b])
            dW, db, dh = mlp_backward(mcache, loss_gradient(margin, y[b]), clf)
            lgrads, (d_static, _) = lstm_gradients(lcache, dh, lstm, need_dX=False)
            # data term by SGD, then the L2 term as its exact proximal step, which stays stable for any lam
            for k, W in enumerate(clf.weights):
                W -= lr * dW[k]
                W *= shrink
                clf.biases[k] -= lr * db[k]
            for g in GATES:
                lstm.W[g] -= lr * lgrads[f"W_{g}"]
                lstm.W[g] *= shrink
                lstm.b[g] -= lr * lgrads[f"b_{g}"]
            if finetune:
                dS = d_static / sd_s
                apply_scatter(bundle.structure.vectors, rows[b], dS, lr)
                if config.reg_scope == "all":
                    bundle.structure.vectors[rows[b]] *= shrink
                seqs.static[b] = (bundle.structure.vectors[rows[b]] - scaler.mean[: config.d_s]) / sd_s
        reg = lam * sum(float(np.sum(w * w)) for w in _reg_weights(bundle))
        history.append({"epoch": epoch, "loss": total + reg})
        if progress:
            progress(epoch, total + reg)
    return bundle


def training_loss(bundle: ModelBundle, X, y) -> float:
    """Classification loss (dropout off) including the regularizer."""
    h, _ = _forward(bundle, _as_sequences(bundle, X))
    margin, _, _ = mlp_forward(h, bundle.classifier)
    return classification_loss(margin, y, bundle.config.lam, _reg_weights(bundle))


def margins(bundle: ModelBundle, X) -> np.ndarray:
    """Classifier margins for precomputed sequences (dropout off)."""
    seqs = _as_sequences(bundle, X)
    if len(seqs) == 0:
        return np.zeros(0)
    h, _ = _forward(bundle, seqs)
    m, _, _ = mlp_forward(h, bundle.classifier)
    return np.atleast_1d(m)


def fit(graph: TemporalGraph, config: TrainConfig, labeled: Optional[dict] = None,
        progress: Optional[Callable] = None) -> ModelBundle:
    """Both stages end to end; ``labeled`` defaults to the graph's labels."""
    bundle = train_embeddings(graph, config, progress=progress)
    return train_classifier(graph, labeled if labeled is not None else graph.labeled(), bundle, config)


def detect(ids, bundle: ModelBundle, graph: TemporalGraph, threshold: float = 0.0) -> list:
    """Classify accounts; unknown ids yield an error row instead of aborting."""
    out = []
    for v in ids:
        try:
            if v not in graph.accounts or v not in bundle.structure._index:
                raise NodeNotFoundError(v)
            m = float(margins(bundle, build_sequences(bundle, graph, [v]))[0])
            out.append({"id": v, "label": predict(m, threshold), "margin": m, "error": ""})
        except DSPSDError as exc:
            out.append({"id": v, "label": "", "margin": float("nan"), "error": f"{type(exc).__name__}: {v}"})
    return out
