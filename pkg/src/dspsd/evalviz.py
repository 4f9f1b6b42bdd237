"""Metrics, k-fold cross-validation, opcode importance and 2-D projection."""
from __future__ import annotations

import csv
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, DSPSDError
from .numerics import make_rng
from .pipeline import (ModelBundle, TrainConfig, _forward, build_sequences, margins, train_classifier,
                       train_embeddings)
from .txgraph import PONZI, TemporalGraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @classmethod
    def from_predictions(cls, y_true, y_pred) -> "ConfusionCounts":
        tp = fp = fn = tn = 0
        for t, p in zip(y_true, y_pred):
            t, p = int(t), int(p)
            if t and p:
                tp += 1
            elif p:
                fp += 1
            elif t:
                fn += 1
            else:
                tn += 1
        return cls(tp, fp, fn, tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f: float
    undefined: tuple = ()  # names of metrics that hit 0/0


def prf(c: ConfusionCounts) -> PRF:
    """Precision, recall and F-score; 0/0 cases yield 0 and are flagged."""
    undefined = []
    if c.tp + c.fp:
        p = c.tp / (c.tp + c.fp)
    else:
        p = 0.0
        undefined.append("precision")
    if c.tp + c.fn:
        r = c.tp / (c.tp + c.fn)
    else:
        r = 0.0
        undefined.append("recall")
    f = 2 * p * r / (p + r) if p + r else 0.0
    if not p + r:
        undefined.append("f")
    return PRF(p, r, f, tuple(undefined))


def f_score(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


# ---------------------------------------------------------------------------
# Folds


def kfold_split(ids, k: int = 10, seed: int = 0, labels: Optional[dict] = None) -> list:
    """Seeded shuffle then round-robin assignment into ``k`` folds.

    With ``labels`` the shuffled positives are dealt first and the
    negatives continue the same round robin, so each fold gets a near-equal
    share of both classes; fold sizes still differ by at most one.
    """
    ids = list(ids)
    if k < 2:
        raise ConfigError("k must be >= 2")
    if len(ids) < k:
        raise ConfigError(f"{len(ids)} items cannot fill {k} folds")
    if len(set(ids)) != len(ids):
        raise DataError("duplicate ids")
    rng = make_rng(seed, 30)
    if labels is None:
        order = [ids[i] for i in rng.permutation(len(ids))]
    else:
        pos = [i for i in ids if labels[i] == PONZI]
        neg = [i for i in ids if labels[i] != PONZI]
        order = [pos[i] for i in rng.permutation(len(pos))] + [neg[i] for i in rng.permutation(len(neg))]
    folds = [[] for _ in range(k)]
    for n, i in enumerate(order):
        folds[n % k].append(i)
    check_folds(folds, ids)
    return folds


def check_folds(folds, ids) -> None:
    sets = [set(f) for f in folds]
    if sum(len(s) for s in sets) != len(set().union(*sets)):
        raise AssertionError("folds overlap")
    if set().union(*sets) != set(ids):
        raise AssertionError("folds do not cover the ids")
    sizes = [len(f) for f in folds]
    if max(sizes) - min(sizes) > 1:
        raise AssertionError("fold sizes differ by more than one")


# ---------------------------------------------------------------------------
# Cross-validation


@dataclass
class FoldResult:
    fold: int
    counts: Optional[ConfusionCounts] = None
    metrics: Optional[PRF] = None
    error: str = ""


@dataclass
class CVReport:
    folds: list
    mean: PRF
    partial: bool = False
    ablation: str = "full"
    extra: dict = field(default_factory=dict)

    def rows(self) -> list:
        out = []
        for fr in self.folds:
            if fr.metrics is None:
                out.append({"fold": fr.fold, "P": "", "R": "", "F": "", "error": fr.error})
            else:
                out.append({"fold": fr.fold, "P": fr.metrics.precision, "R": fr.metrics.recall,
                            "F": fr.metrics.f, "error": ""})
        return out


def _stage2_fold(args):
    fold_idx, bundle, graph, train_ids, test_ids, X_train, X_test, labels = args
    try:
        fb = bundle.copy()
        train_classifier(graph, {i: labels[i] for i in train_ids}, fb, X=X_train, fold=fold_idx)
        m = margins(fb, X_test)
        y_true = [labels[i] for i in test_ids]
        counts = ConfusionCounts.from_predictions(y_true, (m > 0).astype(int))
        return FoldResult(fold_idx, counts, prf(counts))
    except (DSPSDError, FloatingPointError) as exc:
        return FoldResult(fold_idx, error=f"{type(exc).__name__}: {exc}")


def cross_validate(graph: TemporalGraph, config: TrainConfig, k: int = 10, seed: Optional[int] = None,
                   labels: Optional[dict] = None, stage1: Optional[ModelBundle] = None, jobs: int = 1,
                   stratify: bool = True) -> CVReport:
    """k-fold CV of the classifier stage.

    Stage 1 uses only transaction edges and opcodes, never labels, so it is
    trained once on the whole network (or taken from ``stage1``) and
    shared by every fold; each fold then trains LSTM + MLP on the other
    folds' labels from the same initial weights and is scored on its own.
    """
    config.validate()
    labels = labels if labels is not None else graph.labeled()
    ids = list(labels)
    folds = kfold_split(ids, k, config.seed if seed is None else seed, labels if stratify else None)
    bundle = stage1 if stage1 is not None else train_embeddings(graph, config)
    bundle = bundle.copy()
    bundle.config = config
    X = build_sequences(bundle, graph, ids)
    pos = {i: n for n, i in enumerate(ids)}
    tasks = []
    for f, test in enumerate(folds):
        test_set = set(test)
        train = [i for i in ids if i not in test_set]
        tasks.append((f, bundle, graph, train, test, X[np.array([pos[i] for i in train])],
                      X[np.array([pos[i] for i in test])], labels))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_stage2_fold, tasks))
    else:
        results = [_stage2_fold(t) for t in tasks]
    for r in results:
        if r.error:
            log.warning("fold %d failed: %s", r.fold, r.error)
        else:
            log.info("fold %d: P=%.3f R=%.3f F=%.3f", r.fold, r.metrics.precision, r.metrics.recall, r.metrics.f)
    done = [r.metrics for r in results if r.metrics is not None]
    if done:
        mean = PRF(float(np.mean([m.precision for m in done])), float(np.mean([m.recall for m in done])),
                   float(np.mean([m.f for m in done])))
    else:
        mean = PRF(0.0, 0.0, 0.0, ("precision", "recall", "f"))
    return CVReport(results, mean, partial=len(done) < len(results), ablation=config.ablation)


def write_metrics_csv(report: CVReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["fold", "P", "R", "F"])
        for row in report.rows():
            w.writerow([row["fold"], row["P"], row["R"], row["F"]])
        w.writerow(["mean" + ("(partial)" if report.partial else ""), report.mean.precision,
                    report.mean.recall, report.mean.f])


# ---------------------------------------------------------------------------
# Opcode importance


@dataclass(frozen=True)
class OpcodeImportance:
    opcode: str
    score: float
    label: str
    tfidf_ponzi: float
    tfidf_normal: float


def tfidf_opcode_importance(contracts, top: Optional[int] = 80, smooth: bool = False) -> list:
    """Rank opcodes by the larger of their Ponzi-corpus and normal-corpus TF-IDF.

    ``contracts`` is an iterable of ``(opcodes, label)``. IDF is
    ``ln(N / df)`` over all contracts (``ln((1 + N) / (1 + df)) + 1`` with
    ``smooth``); TF is the opcode's count over the class corpus token total.
    """
    contracts = [(list(ops), int(lab)) for ops, lab in contracts]
    if not any(lab == PONZI for _, lab in contracts) or not any(lab != PONZI for _, lab in contracts):
        raise DataError("need at least one contract of each class")
    n = len(contracts)
    df: Counter = Counter()
    for ops, _ in contracts:
        df.update(set(ops))
    tf_p = Counter(op for ops, lab in contracts if lab == PONZI for op in ops)
    tf_n = Counter(op for ops, lab in contracts if lab != PONZI for op in ops)
    tot_p, tot_n = sum(tf_p.values()), sum(tf_n.values())
    rows = []
    for op in df:
        idf = math.log((1 + n) / (1 + df[op])) + 1.0 if smooth else math.log(n / df[op])
        tp = (tf_p[op] / tot_p if tot_p else 0.0) * idf
        tn = (tf_n[op] / tot_n if tot_n else 0.0) * idf
        rows.append(OpcodeImportance(op, max(tp, tn), "Ponzi" if tp > tn else "Normal", tp, tn))
    rows.sort(key=lambda r: (-r.score, r.opcode))
    return rows[:top] if top else rows


def write_importance_csv(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["opcode", "score", "class"])
        for r in rows:
            w.writerow([r.opcode, r.score, r.label])


# ---------------------------------------------------------------------------
# Projection


@dataclass
class Projection:
    coords: np.ndarray  # (n, 2)
    components: np.ndarray  # (2, d)
    variances: np.ndarray  # (2,)
    degenerate: bool = False


def _top_eigvec(S: np.ndarray, rng: np.random.Generator, iters: int, tol: float, against=()):
    def orth(x):
        for u in against:
            x = x - (u @ x) * u
        return x

    v = orth(rng.standard_normal(S.shape[0]))
    v /= np.linalg.norm(v)
    for _ in range(iters):
        w = orth(S @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return v, 0.0
        w /= nrm
        done = np.linalg.norm(w - v) < tol
        v = w
        if done:
            break
    return v, max(float(v @ S @ v), 0.0)


def project_2d(embeddings, seed: int = 0, iters: int = 5000, tol: float = 1e-12) -> Projection:
    """Mean-centred PCA onto two components by power iteration with deflation."""
    X = np.asarray(embeddings, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("need at least two vectors")
    Xc = X - X.mean(axis=0)
    if not np.any(Xc):
        return Projection(np.zeros((len(X), 2)), np.zeros((2, X.shape[1])), np.zeros(2), True)
    S = Xc.T @ Xc / len(X)
    rng = make_rng(seed, 40)
    comps, lams = [], []
    for _ in range(2):
        v, lam = _top_eigvec(S, rng, iters, tol, comps)
        # deterministic sign: largest-magnitude entry positive
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        if lam <= 1e-15:
            v, lam = np.zeros_like(v), 0.0
        comps.append(v)
        lams.append(lam)
        S = S - lam * np.outer(v, v)
    comps = np.array(comps)
    return Projection(Xc @ comps.T, comps, np.array(lams), degenerate=lams[1] == 0.0)


def write_projection_csv(ids, proj: Projection, labels: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "label"])
        for i, (x, y) in zip(ids, proj.coords):
            lab = labels.get(i)
            w.writerow([i, x, y, "" if lab is None else lab])


def write_projection_svg(ids, proj: Projection, labels: dict, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5))
    lab = np.array([labels.get(i, -1) for i in ids])
    for value, color, name in ((0, "tab:blue", "normal"), (1, "tab:red", "Ponzi"), (-1, "tab:gray", "unlabelled")):
        sel = lab == value
        if sel.any():
            ax.scatter(proj.coords[sel, 0], proj.coords[sel, 1], s=10, c=color, label=name)
    ax.set_xlabel("PC1")
    ax.set_ylabel("PC2")
    ax.legend()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def node_embeddings(bundle: ModelBundle, graph: TemporalGraph, ids) -> np.ndarray:
    """Overall (LSTM) embeddings of ``ids``, dropout off."""
    h, _ = _forward(bundle, build_sequences(bundle, graph, list(ids)))
    return np.atleast_2d(h)
