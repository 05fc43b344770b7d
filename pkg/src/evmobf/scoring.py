"""Corpus statistics, Z-scores, the obfuscation threshold and corpus summaries."""

from __future__ import annotations

import hashlib
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Sequence

import numpy as np
from scipy import stats as sps

from .features.vector import FEATURES, FeatureVector

N_FEATURES = len(FEATURES)
SIGMA_CLAMP = 1e6
DEGENERATE_SIGMA = "degenerate-sigma"
SNAPSHOT_VERSION = 1


class InsufficientCorpus(ValueError):
    pass


def _row(v) -> np.ndarray:
    if isinstance(v, FeatureVector):
        return np.asarray(v.values(), dtype=float)
    row = np.asarray(v, dtype=float)
    if row.shape != (N_FEATURES,):
        raise ValueError(f"expected {N_FEATURES} features, got shape {row.shape}")
    return row


@dataclass
class CorpusStats:
    """Mergeable per-feature mean and sum of squared deviations."""

    n: int = 0
    mean: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    m2: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))

    @classmethod
    def from_matrix(cls, matrix) -> "CorpusStats":
        x = np.asarray(matrix, dtype=float).reshape(-1, N_FEATURES)
        if len(x) == 0:
            return cls()
        mu = x.mean(axis=0)
        return cls(len(x), mu, ((x - mu) ** 2).sum(axis=0))

    def add(self, vector) -> None:
        x = _row(vector)
        self.n += 1
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self.m2 = self.m2 + delta * (x - self.mean)

    def merge(self, other: "CorpusStats") -> "CorpusStats":
        if other.n == 0:
            return CorpusStats(self.n, self.mean.copy(), self.m2.copy())
        if self.n == 0:
            return CorpusStats(other.n, other.mean.copy(), other.m2.copy())
        n = self.n + other.n
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.n / n)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.n * other.n / n)
        return CorpusStats(n, mean, m2)

    @property
    def sigma(self) -> np.ndarray:
        if self.n < 2:
            raise InsufficientCorpus(f"need at least 2 contracts, have {self.n}")
        return np.sqrt(np.maximum(self.m2, 0.0) / (self.n - 1))

    @property
    def snapshot_id(self) -> str:
        blob = json.dumps([self.n, [float(x) for x in self.mean], [float(x) for x in self.m2]])
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "version": SNAPSHOT_VERSION,
            "snapshot_id": self.snapshot_id,
            "features": list(FEATURES),
            "n": self.n,
            "mu": [float(x) for x in self.mean],
            "sigma": [float(x) for x in self.sigma],
            "m2": [float(x) for x in self.m2],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CorpusStats":
        if doc.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported stats snapshot version {doc.get('version')!r}")
        n = int(doc["n"])
        mu = np.asarray(doc["mu"], dtype=float)
        if "m2" in doc:
            m2 = np.asarray(doc["m2"], dtype=float)
        else:
            m2 = np.asarray(doc["sigma"], dtype=float) ** 2 * (n - 1)
        return cls(n, mu, m2)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "CorpusStats":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def corpus_stats(vectors: Iterable) -> CorpusStats:
    """Stats over transfer-bearing vectors; flagged no-transfer vectors are skipped."""
    rows = [_row(v) for v in vectors if not (isinstance(v, FeatureVector) and not v.has_transfer)]
    if len(rows) < 2:
        raise InsufficientCorpus(f"need at least 2 contracts with transfers, have {len(rows)}")
    return CorpusStats.from_matrix(np.vstack(rows))


@dataclass(frozen=True)
class ScoredContract:
    id: str
    vector: FeatureVector | None
    z: float
    terms: tuple[float, ...]
    flags: frozenset[str] = frozenset()

    def to_dict(self) -> dict:
        d = {"id": self.id, "z": self.z, "terms": list(self.terms), "flags": sorted(self.flags)}
        if self.vector is not None:
            d.update(self.vector.to_dict())
            d["flags"] = sorted(self.flags | self.vector.flags)
        return d


def z_terms(x, stats: CorpusStats) -> tuple[np.ndarray, bool]:
    """Standardized terms and whether any zero-spread feature had to be clamped."""
    x = _row(x)
    mu, sigma = stats.mean, stats.sigma
    terms = np.zeros(N_FEATURES)
    degenerate = False
    for i in range(N_FEATURES):
        d = x[i] - mu[i]
        if sigma[i] > 0:
            terms[i] = d / sigma[i]
        elif d != 0:
            terms[i] = math.copysign(SIGMA_CLAMP, d)
            degenerate = True
    return terms, degenerate


def z_score(v, stats: CorpusStats) -> float:
    return float(sum(z_terms(v, stats)[0]))


def score(contract_id: str, v: FeatureVector, stats: CorpusStats) -> ScoredContract:
    terms, degenerate = z_terms(v, stats)
    flags = frozenset({DEGENERATE_SIGMA}) if degenerate else frozenset()
    return ScoredContract(contract_id, v, float(sum(terms)), tuple(float(t) for t in terms), flags)


def threshold(mean: float, std: float, n: int, confidence: float = 0.95) -> float:
    """Upper confidence bound of a sample mean."""
    if not 0 < confidence < 1:
        raise ValueError(f"confidence must be in (0, 1), got {confidence}")
    if n < 2:
        raise ValueError("threshold needs n >= 2")
    return mean + sps.t.ppf((1 + confidence) / 2, n - 1) * std / math.sqrt(n)


@dataclass(frozen=True)
class Prevalence:
    above: int
    below: int
    percent: float
    flags: frozenset[str] = frozenset()


def prevalence(scores: Sequence[float], cutoff: float) -> Prevalence:
    above = sum(1 for s in scores if s > cutoff)
    total = len(scores)
    if total == 0:
        return Prevalence(0, 0, 0.0, frozenset({"empty"}))
    return Prevalence(above, total - above, 100.0 * above / total)


def nearest_rank(sorted_values: Sequence[float], p: float) -> float:
    """ceil(p*n)-th smallest value (1-based), clamped to the first element."""
    n = len(sorted_values)
    k = max(1, math.ceil(p * n - 1e-12))
    return sorted_values[min(k, n) - 1]


@dataclass(frozen=True)
class FeatureSummary:
    feature: str
    nonzero_pct: float
    median: float
    p90: float
    p99: float


def feature_quantiles(matrix) -> list[FeatureSummary]:
    x = np.asarray(matrix, dtype=float).reshape(-1, N_FEATURES)
    if len(x) == 0:
        raise ValueError("feature_quantiles needs at least one row")
    out = []
    for i, name in enumerate(FEATURES):
        col = np.sort(x[:, i])
        out.append(FeatureSummary(name, 100.0 * float(np.mean(col > 0)),
                                  float(nearest_rank(col, 0.5)), float(nearest_rank(col, 0.9)),
                                  float(nearest_rank(col, 0.99))))
    return out


def contribution_shares(matrix, stats: CorpusStats) -> np.ndarray:
    """Percentage of mean absolute standardized contribution per feature."""
    x = np.asarray(matrix, dtype=float).reshape(-1, N_FEATURES)
    if len(x) == 0:
        return np.zeros(N_FEATURES)
    sigma = stats.sigma
    safe = np.where(sigma > 0, sigma, 1.0)
    dev = x - stats.mean
    z = np.where(sigma > 0, dev / safe, np.where(dev != 0, np.sign(dev) * SIGMA_CLAMP, 0.0))
    mean_abs = np.abs(z).mean(axis=0)
    total = mean_abs.sum()
    if total == 0:
        return np.zeros(N_FEATURES)
    return 100.0 * mean_abs / total


def top_k(scored: Iterable[ScoredContract], k: int) -> list[ScoredContract]:
    if k < 0:
        raise ValueError("k must be non-negative")
    return sorted(scored, key=lambda s: (-s.z, s.id))[:k]


@dataclass(frozen=True)
class WelchResult:
    t: float
    df: float
    p: float


def welch_t(a: Sequence[float], b: Sequence[float]) -> WelchResult:
    """Two-sided Welch t-test of mean(a) == mean(b)."""
    if len(a) < 2 or len(b) < 2:
        raise ValueError("welch_t needs at least 2 observations per group")
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    se2 = va + vb
    diff = a.mean() - b.mean()
    if se2 == 0:
        if diff == 0:
            return WelchResult(0.0, float(len(a) + len(b) - 2), 1.0)
        return WelchResult(math.copysign(math.inf, diff), float(len(a) + len(b) - 2), 0.0)
    t = diff / math.sqrt(se2)
    df = se2 ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    p = 2 * sps.t.sf(abs(t), df)
    return WelchResult(float(t), float(df), float(p))


@dataclass(frozen=True)
class MonthBucket:
    month: str
    count: int
    median_z: float
    nonzero_pct: tuple[float, ...]


def month_key(ts: datetime | float | int) -> str:
    if isinstance(ts, (int, float)):
        ts = datetime.fromtimestamp(ts, tz=timezone.utc)
    elif ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).strftime("%Y-%m")


def monthly_aggregate(rows: Iterable[tuple[ScoredContract, datetime | float]]) -> list[MonthBucket]:
    buckets: dict[str, list[ScoredContract]] = defaultdict(list)
    for sc, ts in rows:
        buckets[month_key(ts)].append(sc)
    out = []
    for month in sorted(buckets):
        group = buckets[month]
        zs = [s.z for s in group]
        if all(s.vector is not None for s in group):
            x = np.array([s.vector.values() for s in group], dtype=float)
            pct = tuple(float(p) for p in 100.0 * (x > 0).mean(axis=0))
        else:
            pct = ()
        out.append(MonthBucket(month, len(group), float(np.median(zs)), pct))
    return out
