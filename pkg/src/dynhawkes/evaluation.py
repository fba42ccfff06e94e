"""Link prediction, new-link prediction and top-k recommendation benchmarks.

Embeddings of snapshot ``t`` are used to predict the edges of ``t + 1``.
Pair features are ``|u_i - u_j|`` and the classifier is an L2-regularized
logistic regression trained by full-batch gradient descent.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import expit
from scipy.stats import rankdata

from .errors import ValidationError
from .graph import DynamicNetwork
from .intensity import (EmbeddingSequence, HawkesParams, HistoryIndex, conditional_intensity,
                        edge_probability_from_raw, raw_intensity_batch)

log = logging.getLogger(__name__)

TASKS = ("link", "newlink")


class SkippedSnapshotWarning(UserWarning):
    """A snapshot transition contributed no usable evaluation pairs."""


class LabeledPair(NamedTuple):
    i: int
    j: int
    t: int
    label: int
    task: str


def _true_pairs(net, t, task):
    nxt = net.edge_set(t + 1)
    if task == "newlink":
        return sorted(nxt - net.edge_set(t))
    return sorted(nxt)


def _sample_non_edges(net, t, task, count, rng):
    """Uniform distinct unconnected pairs at ``t + 1`` (and ``t`` for newlink)."""
    N = net.vertex_count
    banned = set(net.edge_set(t + 1))
    if task == "newlink":
        banned |= net.edge_set(t)
    total = N * (N - 1) // 2
    available = total - len(banned)
    if available <= 0 or count <= 0:
        return [], available
    count = min(count, available)
    if total <= 2_000_000 or count > available // 4:
        iu, ju = np.triu_indices(N, k=1)
        ok = np.array([(a, b) not in banned for a, b in zip(iu.tolist(), ju.tolist())])
        cand = np.flatnonzero(ok)
        pick = np.sort(rng.choice(cand, size=count, replace=False))
        return [(int(iu[k]), int(ju[k])) for k in pick], available
    chosen: set = set()
    while len(chosen) < count:
        a, b = (int(x) for x in rng.integers(N, size=2))
        if a == b:
            continue
        key = (min(a, b), max(a, b))
        if key not in banned:
            chosen.add(key)
    return sorted(chosen), available


def build_pairs(net: DynamicNetwork, task="link", ratio=1.0, rng=None) -> list[LabeledPair]:
    """Labeled pairs pooled over all transitions ``t -> t + 1``.

    Transitions without positives, or without any admissible negative,
    are skipped with a :class:`SkippedSnapshotWarning`.
    """
    if task not in TASKS:
        raise ValidationError(f"unknown pair task {task!r}")
    if net.T < 2:
        raise ValidationError("pair construction needs at least two snapshots")
    if ratio <= 0:
        raise ValidationError("ratio must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    out = []
    for t in range(1, net.T):
        pos = _true_pairs(net, t, task)
        if not pos:
            warnings.warn(f"{task}: no positives for t={t} -> {t + 1}; skipped",
                          SkippedSnapshotWarning, stacklevel=2)
            continue
        neg, available = _sample_non_edges(net, t, task, int(round(ratio * len(pos))), rng)
        if not neg:
            warnings.warn(f"{task}: no non-links available at t={t + 1}; skipped",
                          SkippedSnapshotWarning, stacklevel=2)
            continue
        if len(neg) < ratio * len(pos):
            warnings.warn(f"{task}: only {available} non-links at t={t + 1}",
                          SkippedSnapshotWarning, stacklevel=2)
        out.extend(LabeledPair(i, j, t, 1, task) for i, j in pos)
        out.extend(LabeledPair(i, j, t, 0, task) for i, j in neg)
    return out


def feature_vector(u_i, u_j) -> np.ndarray:
    a = np.asarray(u_i, dtype=np.float64)
    b = np.asarray(u_j, dtype=np.float64)
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return np.abs(a - b)


def pair_features(pairs, emb: EmbeddingSequence):
    """Feature matrix and label vector for a list of :class:`LabeledPair`."""
    if not pairs:
        return np.zeros((0, emb.dim)), np.zeros(0, dtype=np.int64)
    idx = np.array([(p.t, p.i, p.j) for p in pairs], dtype=np.int64)
    V = emb.vectors
    X = np.abs(V[idx[:, 0] - 1, idx[:, 1]] - V[idx[:, 0] - 1, idx[:, 2]])
    y = np.array([p.label for p in pairs], dtype=np.int64)
    return X, y


@dataclass
class LogisticModel:
    """Logistic regression on standardized features."""

    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def decision(self, X):
        return ((np.asarray(X, dtype=np.float64) - self.mean) / self.scale) @ self.weights + self.bias

    def predict_proba(self, X):
        return expit(self.decision(X))


def fit_classifier(X, y, l2=1e-4, iterations=500, lr=0.1) -> LogisticModel:
    """Full-batch gradient descent from zero weights.

    Minimizes ``mean(logloss) + l2/2 * |w|^2``; features are standardized
    with the training mean and standard deviation first.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValidationError("X must be (n, d) with one label per row")
    if len(np.unique(y)) < 2:
        raise ValidationError("classifier needs samples of both classes")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = (X - mean) / scale
    w = np.zeros(X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(iterations):
        p = expit(Z @ w + b)
        r = p - y
        w -= lr * (Z.T @ r / n + l2 * w)
        b -= lr * r.mean()
    return LogisticModel(w, float(b), mean, scale)


def auc_score(scores, labels) -> float:
    """Mann-Whitney AUC; tied positive/negative pairs count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC needs both classes")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def binary_metrics(scores, labels, threshold=0.5):
    """``(F1, AUC)`` for probability scores against 0/1 labels."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    auc = auc_score(scores, labels)
    pred = scores >= threshold
    tp = int(np.sum(pred & labels))
    fp = int(np.sum(pred & ~labels))
    fn = int(np.sum(~pred & labels))
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    return f1, auc


@dataclass
class MetricRow:
    metric: str
    mean: float
    std: float
    k: int | None = None


@dataclass
class EvalReport:
    task: str
    rows: list[MetricRow]
    samples: dict = field(default_factory=dict)  # metric -> per-fold or per-query values

    def get(self, metric, k=None) -> MetricRow:
        for r in self.rows:
            if r.metric == metric and r.k == k:
                return r
        raise KeyError((metric, k))

    def to_tsv(self) -> str:
        lines = ["task\tmetric\tk\tmean\tstd"]
        for r in self.rows:
            k = "" if r.k is None else str(r.k)
            lines.append(f"{self.task}\t{r.metric}\t{k}\t{r.mean:.6f}\t{r.std:.6f}")
        return "\n".join(lines) + "\n"


def stratified_folds(labels, folds, rng) -> np.ndarray:
    """Fold id per sample; each class is shuffled and dealt round-robin."""
    labels = np.asarray(labels)
    assign = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return assign


def cross_validate(pairs, emb: EmbeddingSequence, folds=5, repeats=10, rng=None,
                   l2=1e-4, iterations=500, lr=0.1, task=None) -> EvalReport:
    """Repeated stratified k-fold evaluation of the pair classifier.

    Mean and (population) standard deviation are taken over all
    ``folds * repeats`` fold evaluations.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    X, y = pair_features(pairs, emb)
    for cls in (0, 1):
        if np.sum(y == cls) < folds:
            raise ValidationError(f"need at least {folds} samples of class {cls}")
    f1s, aucs = [], []
    for _ in range(repeats):
        assign = stratified_folds(y, folds, rng)
        for f in range(folds):
            test = assign == f
            model = fit_classifier(X[~test], y[~test], l2, iterations, lr)
            f1, auc = binary_metrics(model.predict_proba(X[test]), y[test])
            f1s.append(f1)
            aucs.append(auc)
    task = task or (pairs[0].task if pairs else "link")
    f1s, aucs = np.array(f1s), np.array(aucs)
    return EvalReport(
        task,
        [MetricRow("F1", float(f1s.mean()), float(f1s.std())),
         MetricRow("AUC", float(aucs.mean()), float(aucs.std()))],
        {"F1": f1s, "AUC": aucs},
    )


def recommend_topk(i, t, emb: EmbeddingSequence, candidates, k) -> list[int]:
    """Top ``k`` candidates by ``-|u_i - u_j|^2`` at snapshot ``t``; ties by id."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    cand = np.asarray(list(candidates), dtype=np.int64)
    if np.any(cand == i):
        raise ValidationError("candidates must exclude the query vertex")
    U = emb.at(t)
    diff = U[cand] - U[i]
    score = -np.einsum("cd,cd->c", diff, diff)
    order = np.lexsort((cand, -score))
    return cand[order[:k]].tolist()


def ranking_metrics(recommendations: dict, truth: dict, ks) -> dict:
    """Mean ``(P@k, R@k)`` per ``k`` over queries with non-empty truth.

    ``recommendations[q]`` is a ranked list (at least ``max(ks)`` long when
    enough candidates exist); ``truth[q]`` the set of true neighbors.
    """
    ks = list(ks)
    if not ks or any(k < 1 for k in ks):
        raise ValidationError("every k must be >= 1")
    queries = [q for q in recommendations if truth.get(q)]
    if not queries:
        raise ValidationError("no query vertex has ground-truth neighbors")
    out = {}
    for k in ks:
        p, r = _ranking_values(recommendations, truth, queries, k)
        out[k] = (float(p.mean()), float(r.mean()))
    return out


def _ranking_values(recommendations, truth, queries, k):
    p = np.empty(len(queries))
    r = np.empty(len(queries))
    for n, q in enumerate(queries):
        hits = len(set(recommendations[q][:k]) & set(truth[q]))
        p[n] = hits / k
        r[n] = hits / len(truth[q])
    return p, r


def evaluate_recommendation(net: DynamicNetwork, emb: EmbeddingSequence, ks=(10, 20),
                            new_only=False, active_only=False) -> EvalReport:
    """P@k / R@k of ranking all other vertices, for every ``t -> t + 1``."""
    if net.T < 2:
        raise ValidationError("recommendation needs at least two snapshots (no t+1 ground truth)")
    ks = sorted(set(ks))
    if not ks or ks[0] < 1:
        raise ValidationError("every k must be >= 1")
    N = net.vertex_count
    per_k = {k: ([], []) for k in ks}
    for t in range(1, net.T):
        recs, truth = {}, {}
        active = np.flatnonzero(net.degrees(t) > 0) if active_only else np.arange(N)
        for i in range(N):
            nxt = set(net.neighbors(i, t + 1).tolist())
            if new_only:
                nxt -= set(net.neighbors(i, t).tolist())
            if not nxt:
                continue
            cand = active[active != i]
            if len(cand) == 0:
                continue
            truth[i] = nxt
            recs[i] = recommend_topk(i, t, emb, cand, ks[-1])
        queries = [q for q in recs if truth.get(q)]
        if not queries:
            continue
        for k in ks:
            p, r = _ranking_values(recs, truth, queries, k)
            per_k[k][0].extend(p)
            per_k[k][1].extend(r)
    if not per_k[ks[0]][0]:
        raise ValidationError("no query vertex has ground-truth neighbors")
    rows, samples = [], {}
    for k in ks:
        p, r = np.array(per_k[k][0]), np.array(per_k[k][1])
        rows.append(MetricRow("P", float(p.mean()), float(p.std()), k))
        rows.append(MetricRow("R", float(r.mean()), float(r.std()), k))
        samples[f"P@{k}"] = p
        samples[f"R@{k}"] = r
    return EvalReport("recommend", rows, samples)


def exact_softmax_score(i, j, t, emb: EmbeddingSequence, net: DynamicNetwork,
                        params: HawkesParams, h=5) -> float:
    """Probability of ``j`` among all other vertices, by full enumeration."""
    cands = [c for c in range(net.vertex_count) if c != i]
    raw = [conditional_intensity(i, c, t, emb, net, params, h).raw for c in cands]
    return float(edge_probability_from_raw(raw)[cands.index(j)])


def exact_softmax_distribution(i, t, emb, net, params, h=5) -> np.ndarray:
    """Length-``N`` vector of exact probabilities (zero at ``i``)."""
    cands = [c for c in range(net.vertex_count) if c != i]
    raw = [conditional_intensity(i, c, t, emb, net, params, h).raw for c in cands]
    out = np.zeros(net.vertex_count)
    out[cands] = edge_probability_from_raw(raw)
    return out


def exact_nll(events, emb, net, params, h=5) -> float:
    """``-sum log p(j | i)`` over events with the full-vertex-set softmax."""
    total = 0.0
    for i, j, t in events:
        cands = [c for c in range(net.vertex_count) if c != i]
        raw = np.array([conditional_intensity(i, c, t, emb, net, params, h).raw for c in cands])
        m = raw.max()
        lse = m + np.log(np.exp(raw - m).sum())
        total -= raw[cands.index(j)] - lse
    return float(total)


def exact_nll_grad(events, emb, net, params, h=5):
    """Gradients ``(dU, dW, dz, dtheta)`` of :func:`exact_nll`.

    All candidates of every event are scored in one batch; the derivative of
    ``-log p(j | i)`` with respect to candidate ``c``'s raw intensity is
    ``p(c | i) - [c == j]``.
    """
    events = np.asarray(events, dtype=np.int64).reshape(-1, 3)
    N = net.vertex_count
    if len(events) == 0:
        raise ValidationError("exact gradient needs at least one event")
    src = np.repeat(events[:, 0], N)
    cand = np.tile(np.arange(N), len(events))
    t = np.repeat(events[:, 2], N)
    keep = src != cand
    src, cand, t = src[keep], cand[keep], t[keep]
    U = emb.vectors
    index = HistoryIndex(net, h)
    raw = raw_intensity_batch(U, params, index, src, cand, t)[0].reshape(len(events), N - 1)
    p = np.exp(raw - raw.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    upstream = p - (cand.reshape(len(events), N - 1) == events[:, 1:2])
    return raw_intensity_batch(U, params, index, src, cand, t, upstream.reshape(-1))[3]


def evaluate(net, emb, task="link", ratio=1.0, folds=5, repeats=10, ks=(10, 20), seed=0,
             new_only=False, active_only=False, **clf) -> EvalReport:
    """Run one of ``link``, ``newlink`` or ``recommend`` end to end."""
    if task == "recommend":
        return evaluate_recommendation(net, emb, ks, new_only=new_only, active_only=active_only)
    if net.T < 2:
        raise ValidationError("evaluation needs at least two snapshots (no t+1 ground truth)")
    rng = np.random.default_rng(seed)
    pairs = build_pairs(net, task, ratio, rng)
    return cross_validate(pairs, emb, folds, repeats, rng, task=task, **clf)
