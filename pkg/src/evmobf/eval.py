"""Detection metrics, cross-validated logistic baseline and ablations."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .features.vector import FEATURES
from .scoring import SIGMA_CLAMP

ZERO_DIVISION = "zero-division"
NOT_CONVERGED = "not-converged"


@dataclass(frozen=True)
class LabeledSet:
    ids: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if self.x.ndim != 2 or len(self.x) != len(self.y) or len(self.ids) != len(self.y):
            raise ValueError("ids, rows and labels must align")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_arrays(cls, x, y, ids=None) -> "LabeledSet":
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=int)
        if ids is None:
            ids = [str(i) for i in range(len(y))]
        return cls(tuple(ids), x, y)

    @classmethod
    def load_csv(cls, path) -> "LabeledSet":
        ids, rows, labels = [], [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"id", "label", *FEATURES} - set(reader.fieldnames or ())
            if missing:
                raise ValueError(f"{path}: missing columns {sorted(missing)}")
            for rec in reader:
                ids.append(rec["id"])
                rows.append([float(rec[f]) for f in FEATURES])
                labels.append(int(rec["label"]))
        return cls.from_arrays(np.array(rows).reshape(-1, len(FEATURES)), labels, ids)


@dataclass(frozen=True)
class MetricReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int
    roc_auc: float | None = None
    pr_auc: float | None = None
    flags: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flags"] = sorted(self.flags)
        return d


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int = 0) -> MetricReport:
    flags = set()
    if tp + fp:
        precision = tp / (tp + fp)
    else:
        precision = 0.0
        flags.add(ZERO_DIVISION)
    if tp + fn:
        recall = tp / (tp + fn)
    else:
        recall = 0.0
        flags.add(ZERO_DIVISION)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return MetricReport(precision, recall, f1, tp, fp, fn, tn, flags=frozenset(flags))


def confusion_metrics(labels: Sequence[int], predictions: Sequence[int]) -> MetricReport:
    y = np.asarray(labels, dtype=int)
    p = np.asarray(predictions, dtype=int)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {len(y)} labels vs {len(p)} predictions")
    tp = int(np.sum((y == 1) & (p == 1)))
    fp = int(np.sum((y == 0) & (p == 1)))
    fn = int(np.sum((y == 1) & (p == 0)))
    tn = int(np.sum((y == 0) & (p == 0)))
    return metrics_from_counts(tp, fp, fn, tn)


def _check_binary(y: np.ndarray) -> None:
    if len(np.unique(y)) != 2:
        raise ValueError("both classes must be present")


def roc_auc(labels, scores) -> float:
    """Mann-Whitney U over midranks, normalized to [0, 1]."""
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    _check_binary(y)
    ranks = rankdata(s)
    n1 = int(y.sum())
    n0 = len(y) - n1
    u = ranks[y == 1].sum() - n1 * (n1 + 1) / 2
    return float(u / (n1 * n0))


def pr_auc(labels, scores) -> float:
    """Average precision: precision at each distinct threshold weighted by the recall gained."""
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    _check_binary(y)
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last_of_group = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tps = np.cumsum(y)[last_of_group]
    seen = last_of_group + 1
    precision = tps / seen
    recall = tps / y.sum()
    gained = np.diff(np.r_[0.0, recall])
    return float(np.sum(gained * precision))


def predict_by_cutoff(scores, cutoff: float) -> np.ndarray:
    return (np.asarray(scores, dtype=float) >= cutoff).astype(int)


def detection_report(labels, scores, cutoff: float) -> MetricReport:
    """Thresholded metrics at ``scores >= cutoff`` plus both AUCs on the raw scores."""
    rep = confusion_metrics(labels, predict_by_cutoff(scores, cutoff))
    return _with_auc(rep, labels, scores)


def _with_auc(rep: MetricReport, labels, scores) -> MetricReport:
    return MetricReport(rep.precision, rep.recall, rep.f1, rep.tp, rep.fp, rep.fn, rep.tn,
                        roc_auc(labels, scores), pr_auc(labels, scores), rep.flags)


def stratified_folds(y, folds: int, seed: int) -> np.ndarray:
    """Fold index per row; each class is shuffled then dealt round-robin."""
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(seed)
    assign = np.empty(len(y), dtype=int)
    offset = 0
    for cls in (0, 1):
        idx = np.nonzero(y == cls)[0]
        idx = idx[rng.permutation(len(idx))]
        assign[idx] = (np.arange(len(idx)) + offset) % folds
        offset += len(idx)
    return assign


@dataclass
class LogisticModel:
    coef: np.ndarray
    intercept: float
    mean: np.ndarray
    scale: np.ndarray
    converged: bool
    iterations: int

    def predict_proba(self, x) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.mean) / self.scale
        return _sigmoid(z @ self.coef + self.intercept)


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def fit_logistic(x, y, c: float = 1.0, tol: float = 1e-6, max_iter: int = 20000) -> LogisticModel:
    """L2-penalized logistic regression on standardized columns.

    Minimizes ``0.5*|w|^2 + c * sum(logloss)`` with an unpenalized intercept
    by Nesterov-accelerated gradient descent with adaptive restart, stopping
    when the gradient norm drops below ``tol``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    z = np.hstack([(x - mean) / scale, np.ones((len(x), 1))])
    d = z.shape[1]
    penal = np.r_[np.ones(d - 1), 0.0]
    lip = 1.0 + 0.25 * c * np.linalg.eigvalsh(z.T @ z).max()
    step = 1.0 / lip

    def grad(w):
        return penal * w + c * (z.T @ (_sigmoid(z @ w) - y))

    w = np.zeros(d)
    v = w.copy()
    t = 1.0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(v)
        w_next = v - step * g
        if np.linalg.norm(grad(w_next)) < tol:
            w = w_next
            converged = True
            break
        t_next = (1 + math.sqrt(1 + 4 * t * t)) / 2
        if np.dot(g, w_next - w) > 0:
            # momentum points uphill: restart
            t_next = 1.0
            v = w_next
        else:
            v = w_next + ((t - 1) / t_next) * (w_next - w)
        w, t = w_next, t_next
    return LogisticModel(w[:-1], float(w[-1]), mean, scale, converged, it)


@dataclass
class CvResult:
    probabilities: np.ndarray
    folds: np.ndarray
    report: MetricReport
    fold_reports: list[MetricReport] = field(default_factory=list)


def logistic_cv(data: LabeledSet, folds: int = 5, seed: int = 0, columns=None, c: float = 1.0) -> CvResult:
    """Out-of-fold probabilities from stratified k-fold logistic regression."""
    if folds < 2 or len(data) < folds:
        raise ValueError(f"need folds >= 2 and n >= folds (folds={folds}, n={len(data)})")
    x = data.x if columns is None else data.x[:, list(columns)]
    y = data.y
    _check_binary(y)
    assign = stratified_folds(y, folds, seed)
    proba = np.zeros(len(y))
    flags = set()
    fold_reports = []
    for k in range(folds):
        test = assign == k
        model = fit_logistic(x[~test], y[~test], c)
        if not model.converged:
            flags.add(NOT_CONVERGED)
        proba[test] = model.predict_proba(x[test])
        rep = confusion_metrics(y[test], (proba[test] >= 0.5).astype(int))
        if len(np.unique(y[test])) == 2:
            rep = _with_auc(rep, y[test], proba[test])
        fold_reports.append(rep)
    rep = _with_auc(confusion_metrics(y, (proba >= 0.5).astype(int)), y, proba)
    rep = MetricReport(**{**rep.__dict__, "flags": rep.flags | flags})
    return CvResult(proba, assign, rep, fold_reports)


@dataclass(frozen=True)
class DropColumnRow:
    feature: str
    delta_pr_auc: float
    delta_f1: float


def drop_column(data: LabeledSet, folds: int = 5, seed: int = 0, c: float = 1.0) -> list[DropColumnRow]:
    """Per-feature loss in PR-AUC and F1 when retrained without that feature.

    Deltas are averaged over the shared folds; folds whose test part lacks a
    class contribute to F1 only.
    """
    n_feat = data.x.shape[1]
    full = logistic_cv(data, folds, seed, c=c)
    rows = []
    for i in range(n_feat):
        keep = [j for j in range(n_feat) if j != i]
        dropped = logistic_cv(data, folds, seed, columns=keep, c=c)
        d_pr = [a.pr_auc - b.pr_auc for a, b in zip(full.fold_reports, dropped.fold_reports)
                if a.pr_auc is not None and b.pr_auc is not None]
        d_f1 = [a.f1 - b.f1 for a, b in zip(full.fold_reports, dropped.fold_reports)]
        name = FEATURES[i] if n_feat == len(FEATURES) else f"x{i}"
        rows.append(DropColumnRow(name, float(np.mean(d_pr)) if d_pr else 0.0, float(np.mean(d_f1))))
    return sorted(rows, key=lambda r: (-r.delta_pr_auc, r.feature))


def column_z(matrix, columns=None) -> np.ndarray:
    """Z-scores of every row using stats estimated on the matrix itself over ``columns``."""
    x = np.asarray(matrix, dtype=float)
    if columns is not None:
        x = x[:, list(columns)]
    mu = x.mean(axis=0)
    sigma = x.std(axis=0, ddof=1) if len(x) > 1 else np.zeros(x.shape[1])
    dev = x - mu
    safe = np.where(sigma > 0, sigma, 1.0)
    terms = np.where(sigma > 0, dev / safe, np.where(dev != 0, np.sign(dev) * SIGMA_CLAMP, 0.0))
    return terms.sum(axis=1)


def ablated_scores(matrix, feature: int) -> np.ndarray:
    n_feat = np.asarray(matrix).shape[1]
    return column_z(matrix, [j for j in range(n_feat) if j != feature])


def _top_ids(ids, scores, k):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], ids[i]))
    return {ids[i] for i in order[:k]}


def ranking_overlap(full_scores, ablated, k: int, ids=None) -> float:
    full_scores = [float(s) for s in full_scores]
    ablated = [float(s) for s in ablated]
    if len(full_scores) != len(ablated):
        raise ValueError("score vectors must cover the same contracts")
    n = len(full_scores)
    if k > n or k <= 0:
        raise ValueError(f"k must be in 1..{n}, got {k}")
    if ids is None:
        ids = [f"{i:012d}" for i in range(n)]
    return len(_top_ids(ids, full_scores, k) & _top_ids(ids, ablated, k)) / k
