"""Report figures rendered to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .features.vector import FEATURES  # noqa: E402

_SAVE = {"dpi": 120, "bbox_inches": "tight", "metadata": {"Software": None}}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, **_SAVE)
    plt.close(fig)
    return path


def z_histogram(scores: Sequence[float], cutoff: float | None, path, bins: int = 60) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    z = np.asarray(scores, dtype=float)
    ax.hist(z, bins=bins, color="#4c72b0", edgecolor="white", linewidth=0.3)
    if cutoff is not None:
        ax.axvline(cutoff, color="#c44e52", linestyle="--", label=f"cutoff {cutoff:.3f}")
        ax.legend(frameon=False)
    ax.set_xlabel("Z-score")
    ax.set_ylabel("contracts")
    ax.set_yscale("log")
    return _save(fig, path)


def monthly_trend(buckets, path) -> Path:
    """Median Z per month on top, per-feature nonzero rate below."""
    months = [b.month for b in buckets]
    x = np.arange(len(months))
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    top.plot(x, [b.median_z for b in buckets], marker="o", markersize=3)
    top.set_ylabel("median Z")
    if buckets and buckets[0].nonzero_pct:
        rates = np.array([b.nonzero_pct for b in buckets])
        for i, name in enumerate(FEATURES):
            bottom.plot(x, rates[:, i], label=name.upper())
        bottom.legend(ncol=7, fontsize=7, frameon=False, loc="upper center")
    bottom.set_ylabel("P(F > 0) %")
    bottom.set_xticks(x)
    bottom.set_xticklabels(months, rotation=60, fontsize=7)
    return _save(fig, path)


def roc_pr_curves(labels, scores, path, title: str = "") -> Path:
    y = np.asarray(labels, dtype=int)
    s = np.asarray(scores, dtype=float)
    order = np.argsort(-s, kind="mergesort")
    ys = y[order]
    tps = np.r_[0, np.cumsum(ys)]
    fps = np.r_[0, np.cumsum(1 - ys)]
    tpr = tps / max(1, ys.sum())
    fpr = fps / max(1, (1 - ys).sum())
    precision = np.where(np.arange(len(tps)) > 0, tps / np.maximum(1, np.arange(len(tps))), 1.0)
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.5))
    a.plot(fpr, tpr)
    a.plot([0, 1], [0, 1], color="grey", linewidth=0.5)
    a.set_xlabel("false positive rate")
    a.set_ylabel("true positive rate")
    b.step(tpr, precision, where="post")
    b.set_xlabel("recall")
    b.set_ylabel("precision")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def drop_column_bars(rows, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.5))
    names = [r.feature.upper() for r in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.2, [r.delta_pr_auc for r in rows], 0.4, label="PR-AUC")
    ax.bar(x + 0.2, [r.delta_f1 for r in rows], 0.4, label="F1")
    ax.axhline(0, color="black", linewidth=0.5)
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylabel("loss when dropped")
    ax.legend(frameon=False)
    return _save(fig, path)
