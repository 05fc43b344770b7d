from __future__ import annotations

import math
import random
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from evmobf.features.vector import FEATURES, FeatureVector
from evmobf.scoring import (
    DEGENERATE_SIGMA,
    SIGMA_CLAMP,
    CorpusStats,
    InsufficientCorpus,
    ScoredContract,
    contribution_shares,
    corpus_stats,
    feature_quantiles,
    monthly_aggregate,
    nearest_rank,
    prevalence,
    score,
    threshold,
    top_k,
    welch_t,
    z_score,
    z_terms,
)

K = len(FEATURES)


def vec(values, flags=()) -> FeatureVector:
    return FeatureVector.from_values(values, flags=flags)


def random_stats(rng: np.random.Generator, n: int = 50) -> CorpusStats:
    return CorpusStats.from_matrix(rng.normal(5, 3, size=(n, K)))


# --- corpus statistics -----------------------------------------------------

def test_sigma_uses_sample_deviation():
    m = np.zeros((2, K))
    m[1] = 2.0
    s = CorpusStats.from_matrix(m)
    assert np.allclose(s.mean, 1.0)
    assert np.allclose(s.sigma, math.sqrt(2))


def test_identical_vectors_zero_sigma():
    s = CorpusStats.from_matrix(np.ones((5, K)) * 3)
    assert np.all(s.sigma == 0)


def test_insufficient_corpus():
    with pytest.raises(InsufficientCorpus):
        CorpusStats.from_matrix(np.ones((1, K))).sigma
    with pytest.raises(InsufficientCorpus):
        corpus_stats([[1.0] * K])


def test_corpus_stats_skips_no_transfer_vectors():
    vs = [vec([1, 1, 0, 1, 0.2, 10, 0]), vec([3, 3, 1, 3, 0.6, 30, 1]),
          FeatureVector.no_transfer()]
    assert not vs[2].has_transfer
    s = corpus_stats(vs)
    assert s.n == 2 and np.allclose(s.mean, [2, 2, 0.5, 2, 0.4, 20, 0.5])
    with pytest.raises(InsufficientCorpus):
        corpus_stats(vs[1:])


def test_incremental_add_matches_batch():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(40, K))
    inc = CorpusStats()
    for row in m:
        inc.add(row)
    ref = CorpusStats.from_matrix(m)
    assert inc.n == 40
    assert np.allclose(inc.mean, ref.mean) and np.allclose(inc.sigma, ref.sigma)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 60), st.integers(0, 10**6), st.floats(0.05, 0.95))
def test_merge_law(n, seed, frac):
    rng = np.random.default_rng(seed)
    m = rng.normal(rng.uniform(-50, 50), rng.uniform(0.1, 30), size=(n, K))
    cut = int(frac * n)
    merged = CorpusStats.from_matrix(m[:cut]).merge(CorpusStats.from_matrix(m[cut:]))
    assert merged.n == n
    # numpy on the concatenation is the oracle.
    assert np.allclose(merged.mean, m.mean(axis=0), rtol=1e-9, atol=1e-9)
    assert np.allclose(merged.sigma, m.std(axis=0, ddof=1), rtol=1e-9, atol=1e-12)


def test_snapshot_round_trip(tmp_path):
    s = random_stats(np.random.default_rng(1))
    p = tmp_path / "snap.json"
    s.save(p)
    back = CorpusStats.load(p)
    assert back.n == s.n and back.snapshot_id == s.snapshot_id
    assert np.array_equal(back.mean, s.mean) and np.array_equal(back.m2, s.m2)
    doc = s.to_json()
    del doc["m2"]
    assert np.allclose(CorpusStats.from_json(doc).sigma, s.sigma)
    doc["version"] = 99
    with pytest.raises(ValueError):
        CorpusStats.from_json(doc)


# --- Z-scores --------------------------------------------------------------

def test_mean_vector_scores_zero():
    s = random_stats(np.random.default_rng(2))
    assert abs(z_score(s.mean, s)) < 1e-9


def test_plus_one_sigma_everywhere_scores_seven():
    s = random_stats(np.random.default_rng(4))
    assert abs(z_score(s.mean + s.sigma, s) - K) < 1e-9


def test_two_sigma_on_one_feature():
    s = random_stats(np.random.default_rng(5))
    x = s.mean.copy()
    x[0] += 2 * s.sigma[0]
    assert abs(z_score(x, s) - 2.0) < 1e-9


def test_affine_response_1000_vectors():
    rng = np.random.default_rng(6)
    s = random_stats(rng)
    for _ in range(1000):
        x = rng.normal(5, 3, size=K)
        i = rng.integers(K)
        k = rng.uniform(-5, 5)
        y = x.copy()
        y[i] += k * s.sigma[i]
        assert abs(z_score(y, s) - z_score(x, s) - k) < 1e-9


def test_degenerate_sigma_clamped_and_flagged():
    m = np.random.default_rng(7).normal(size=(10, K))
    m[:, 2] = 4.0
    s = CorpusStats.from_matrix(m)
    x = s.mean.copy()
    x[2] = 5.0
    terms, degenerate = z_terms(x, s)
    assert degenerate and terms[2] == SIGMA_CLAMP
    rows = [vec([i, i % 3, i % 2, 2, 0.5, 50, 0]) for i in range(10)]
    s = corpus_stats(rows)
    assert DEGENERATE_SIGMA in score("c", vec([4, 1, 0, 3, 0.5, 50, 0]), s).flags
    ok = score("c", vec([4, 1, 0, 2, 0.5, 50, 0]), s)
    assert ok.flags == frozenset() and ok.terms[3] == 0.0


def test_z_terms_rejects_wrong_width():
    s = random_stats(np.random.default_rng(8))
    with pytest.raises(ValueError):
        z_score([1.0, 2.0], s)


# --- threshold --------------------------------------------------------------

def test_threshold_reference_value():
    assert abs(threshold(4.571, 0.641, 361, 0.95) - 4.637) <= 0.001


def test_threshold_zero_std_is_mean():
    assert threshold(3.25, 0.0, 50, 0.95) == 3.25


def test_threshold_df1_against_closed_form():
    # For one degree of freedom the t quantile is tan(pi*(p - 1/2)); tabulated 12.706.
    t975 = math.tan(math.pi * 0.475)
    assert abs(t975 - 12.706) < 1e-3
    assert abs(threshold(0, 1, 2, 0.95) - t975 / math.sqrt(2)) < 1e-9


@pytest.mark.parametrize("conf", [0.8, 0.9, 0.99])
def test_threshold_df2_against_closed_form(conf):
    # For two degrees of freedom the quantile is (2p-1)/sqrt(2p(1-p)).
    p = (1 + conf) / 2
    t = (2 * p - 1) / math.sqrt(2 * p * (1 - p))
    assert abs(threshold(1.0, 2.0, 3, conf) - (1.0 + t * 2.0 / math.sqrt(3))) < 1e-9


@pytest.mark.parametrize("conf", [0.0, 1.0, -0.1, 1.5])
def test_threshold_invalid_confidence(conf):
    with pytest.raises(ValueError):
        threshold(1, 1, 10, conf)


def test_threshold_needs_two():
    with pytest.raises(ValueError):
        threshold(1, 1, 1)


@settings(max_examples=200)
@given(st.floats(-10, 10), st.floats(0.01, 10), st.floats(0.01, 10), st.integers(2, 5000), st.integers(1, 100))
def test_threshold_monotone(mean, s1, s2, n, dn):
    lo, hi = sorted((s1, s2))
    assert threshold(mean, lo, n) <= threshold(mean, hi, n) + 1e-12
    assert threshold(mean, hi, n + dn) <= threshold(mean, hi, n) + 1e-12
    assert threshold(mean, hi, n) >= mean


# --- prevalence and summaries ----------------------------------------------

def test_prevalence_reference_counts():
    above, total = 739_763, 1_042_923
    scores = np.concatenate([np.full(above, 6.0), np.full(total - above, 3.0)])
    p = prevalence(scores, 4.637)
    assert (p.above, p.below) == (above, total - above)
    assert f"{p.percent:.2f}" == "70.93"


def test_prevalence_empty_flagged():
    p = prevalence([], 1.0)
    assert (p.above, p.below, p.percent) == (0, 0, 0.0)
    assert "empty" in p.flags


def test_prevalence_cutoff_is_strict():
    p = prevalence([1.0, 2.0, 2.0, 3.0], 2.0)
    assert (p.above, p.below) == (1, 3)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(-100, 100), st.floats(0, 50))
def test_prevalence_non_increasing(scores, c, dc):
    assert prevalence(scores, c + dc).percent <= prevalence(scores, c).percent


def test_quantiles_zero_column():
    (q, *_) = feature_quantiles(np.zeros((10, K)))
    assert (q.nonzero_pct, q.median, q.p90, q.p99) == (0.0, 0.0, 0.0, 0.0)


def test_quantiles_nearest_rank():
    m = np.tile(np.arange(1, 101, dtype=float)[:, None], (1, K))
    for q in feature_quantiles(m):
        assert (q.median, q.p90, q.p99, q.nonzero_pct) == (50.0, 90.0, 99.0, 100.0)
    assert nearest_rank([7.0], 0.99) == 7.0
    with pytest.raises(ValueError):
        feature_quantiles(np.zeros((0, K)))


def test_quantiles_constant_column():
    m = np.full((13, K), 2.5)
    assert all((q.median, q.p90, q.p99) == (2.5, 2.5, 2.5) for q in feature_quantiles(m))


def test_shares_sum_to_100_and_single_feature():
    rng = np.random.default_rng(9)
    m = rng.normal(size=(200, K))
    s = CorpusStats.from_matrix(m)
    assert abs(contribution_shares(m, s).sum() - 100) < 1e-9
    m2 = np.zeros((200, K))
    m2[:, 3] = rng.normal(size=200)
    shares = contribution_shares(m2, CorpusStats.from_matrix(m2))
    assert shares[3] == pytest.approx(100.0) and shares.sum() == pytest.approx(100.0)


def test_shares_iid_equal():
    m = np.random.default_rng(10).normal(size=(100_000, K))
    shares = contribution_shares(m, CorpusStats.from_matrix(m))
    assert np.all(np.abs(shares - 100 / K) < 2.0)


# --- ranking ----------------------------------------------------------------

def sc(i: str, z: float) -> ScoredContract:
    return ScoredContract(i, None, z, ())


def test_top_k_edges():
    items = [sc("b", 1.0), sc("a", 1.0), sc("c", 3.0)]
    assert top_k(items, 0) == []
    assert [s.id for s in top_k(items, 10)] == ["c", "a", "b"]
    with pytest.raises(ValueError):
        top_k(items, -1)


def test_top_k_ties_by_id_regardless_of_order():
    items = [sc(f"x{i}", 2.0) for i in range(10)]
    random.Random(0).shuffle(items)
    assert [s.id for s in top_k(items, 3)] == ["x0", "x1", "x2"]


def test_ranking_invariant_to_feature_shift():
    rng = np.random.default_rng(11)
    m = rng.normal(size=(100, K))
    shifted = m + rng.uniform(-10, 10, size=K)

    def ranked(mat):
        st_ = CorpusStats.from_matrix(mat)
        return [s.id for s in top_k([sc(str(i), z_score(r, st_)) for i, r in enumerate(mat)], 10)]

    assert ranked(m) == ranked(shifted)


# --- Welch -----------------------------------------------------------------

def test_welch_identical_groups():
    r = welch_t([1, 2, 3], [1, 2, 3])
    assert r.t == 0 and r.p == 1


def test_welch_hand_example():
    # Means 2 and 5, both sample variances 1: t = -3/sqrt(2/3), df = 4.
    r = welch_t([1, 2, 3], [4, 5, 6])
    assert r.t == pytest.approx(-3 / math.sqrt(2 / 3), abs=1e-12)
    assert round(r.t, 3) == -3.674
    assert r.df == pytest.approx(4.0)


@settings(max_examples=100)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=30),
       st.lists(st.floats(-100, 100), min_size=2, max_size=30))
def test_welch_matches_scipy_and_antisymmetric(a, b):
    r = welch_t(a, b)
    if np.var(a) + np.var(b) < 1e-6:
        return
    ref = sps.ttest_ind(a, b, equal_var=False)
    assert r.t == pytest.approx(ref.statistic, rel=1e-7, abs=1e-9)
    assert r.p == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-12)
    back = welch_t(b, a)
    assert back.t == pytest.approx(-r.t) and back.p == pytest.approx(r.p)


def test_welch_needs_two_per_group():
    with pytest.raises(ValueError):
        welch_t([1], [1, 2])


# --- monthly aggregation ---------------------------------------------------

def scored_vec(i: str, z: float, values) -> ScoredContract:
    return ScoredContract(i, vec(values), z, ())


def test_monthly_single_bucket_median():
    ts = datetime(2023, 5, 10, tzinfo=timezone.utc)
    rows = [(scored_vec(str(i), z, [i % 2, 0, 0, 0, 0, 0, 0]), ts) for i, z in enumerate([1, 5, 9, 4, 7])]
    (b,) = monthly_aggregate(rows)
    assert (b.month, b.count, b.median_z) == ("2023-05", 5, 5.0)
    assert b.nonzero_pct[0] == pytest.approx(40.0) and b.nonzero_pct[1] == 0.0


def test_monthly_utc_rollover():
    end = datetime(2024, 1, 31, 23, 59, 59, tzinfo=timezone.utc)
    start = end + timedelta(seconds=1)
    local = datetime(2024, 2, 1, 1, 0, tzinfo=timezone(timedelta(hours=2)))
    rows = [(sc("a", 1.0), end), (sc("b", 2.0), start), (sc("c", 3.0), local),
            (sc("d", 4.0), start.timestamp())]
    buckets = monthly_aggregate(rows)
    assert [(b.month, b.count) for b in buckets] == [("2024-01", 2), ("2024-02", 2)]
    assert buckets[0].nonzero_pct == ()
