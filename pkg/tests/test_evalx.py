import itertools
import math

import numpy as np
import pytest

from decrec.corpus import GroupMembership
from decrec.evalx import (
    c_kl,
    calibration_rerank,
    drift_bucket_report,
    evaluate_rankings,
    ndcg_at_k,
    recall_at_k,
)
from decrec.inference import RankedList


def one_hot_membership(groups_of_items, n_groups):
    q = np.zeros((len(groups_of_items), n_groups))
    for i, g in enumerate(groups_of_items):
        q[i, g] = 1.0
    return GroupMembership(q, [f"g{n}" for n in range(n_groups)])


# --- independent brute-force references ---------------------------------------

def ref_recall(ranked, relevant, k):
    hits = len([i for i in list(ranked)[:k] if i in set(relevant)])
    return hits / len(set(relevant))


def ref_ndcg(ranked, relevant, k):
    rel = set(relevant)
    dcg = sum(1.0 / math.log2(pos + 1) for pos, i in enumerate(list(ranked)[:k], start=1)
              if i in rel)
    ideal = sum(1.0 / math.log2(pos + 1) for pos in range(1, min(len(rel), k) + 1))
    return dcg / ideal


def ref_ckl(p, items, q_table, beta=0.01):
    n = len(p)
    counts = [0.0] * n
    for i in items:
        for g in range(n):
            counts[g] += q_table[i][g]
    q = [c / len(items) for c in counts]
    total = 0.0
    for g in range(n):
        qt = (1 - beta) * q[g] + beta * p[g]
        if p[g] > 0:
            total += p[g] * math.log(p[g] / qt)
    return total


# --- recall / ndcg -------------------------------------------------------------

def test_recall_examples():
    assert recall_at_k([5, 1, 2], {5}, 10) == 1.0
    assert recall_at_k([1, 2, 3], {9}, 3) == 0.0
    assert recall_at_k([1, 2, 3, 4], {1, 2, 8, 9}, 4) == 0.5


def test_ndcg_examples():
    assert ndcg_at_k([7], {7}, 10) == 1.0
    assert ndcg_at_k([3, 7], {7}, 10) == pytest.approx(0.6309297535714575)
    assert ndcg_at_k([1, 2], {9}, 2) == 0.0


def test_ndcg_perfect_prefix():
    # NDCG = 1 iff the first min(|rel|, K) slots are the relevant items
    assert ndcg_at_k([4, 2, 9, 1], {2, 4}, 2) == pytest.approx(1.0)
    assert ndcg_at_k([4, 1, 2], {2, 4}, 2) < 1.0


def test_metrics_empty_relevant_rejected():
    with pytest.raises(ValueError):
        recall_at_k([1], set(), 1)
    with pytest.raises(ValueError):
        ndcg_at_k([1], set(), 1)


def test_metric_oracle_equivalence_exhaustive():
    # all universes up to 10 items, every non-empty relevant subset, k sweep
    for n in range(1, 11):
        ranked = list(range(n))
        for bits in range(1, 2 ** n):
            relevant = {i for i in range(n) if bits & (1 << i)}
            for k in (1, max(1, n // 2), n):
                assert recall_at_k(ranked, relevant, k) == pytest.approx(
                    ref_recall(ranked, relevant, k))
                assert ndcg_at_k(ranked, relevant, k) == pytest.approx(
                    ref_ndcg(ranked, relevant, k))


def test_metric_oracle_equivalence_random_orders():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(1, 11))
        ranked = rng.permutation(n).tolist()
        n_rel = int(rng.integers(1, n + 1))
        relevant = set(rng.choice(n, size=n_rel, replace=False).tolist())
        k = int(rng.integers(1, n + 1))
        assert recall_at_k(ranked, relevant, k) == pytest.approx(ref_recall(ranked, relevant, k))
        assert ndcg_at_k(ranked, relevant, k) == pytest.approx(ref_ndcg(ranked, relevant, k))


# --- c_kl ------------------------------------------------------------------------

def test_ckl_identical_distributions_zero():
    gm = one_hot_membership([0, 0, 0, 1], 2)  # recommend 3:1 -> q=[0.75,0.25]
    p = np.array([0.75, 0.25])
    v = c_kl(p, [0, 1, 2, 3], gm)
    # beta-smoothing pulls q toward p, so identical distributions give ~0
    assert v == pytest.approx(0.0, abs=1e-12)


def test_ckl_reference_value():
    # frozen from a scalar-arithmetic oracle evaluated before the build:
    # p=[0.7,0.3], q=[0.9,0.1], beta=0.01 -> KL(p || 0.99 q + 0.01 p)
    gm = one_hot_membership([0] * 9 + [1], 2)
    v = c_kl(np.array([0.7, 0.3]), list(range(10)), gm)
    assert v == pytest.approx(0.14928008513042246, abs=1e-12)


def test_ckl_missing_group_is_finite():
    gm = one_hot_membership([0, 0], 2)
    v = c_kl(np.array([0.5, 0.5]), [0, 1], gm)
    assert np.isfinite(v) and v > 0


def test_ckl_matches_reference_random():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n_groups = int(rng.integers(2, 5))
        n_items = int(rng.integers(1, 10))
        groups = rng.integers(0, n_groups, size=n_items)
        gm = one_hot_membership(groups.tolist(), n_groups)
        p = rng.random(n_groups)
        p /= p.sum()
        items = list(range(n_items))
        assert c_kl(p, items, gm) == pytest.approx(
            ref_ckl(p.tolist(), items, gm.q.tolist()), abs=1e-12)


def test_ckl_majority_overshoot_never_decreases():
    # brute force on 2-group toys: pushing extra majority items beyond the
    # history share never lowers the divergence
    gm = one_hot_membership([0] * 10 + [1] * 10, 2)
    p = np.array([0.7, 0.3])
    values = []
    for n_major in range(14, 21):  # share 0.7 .. 1.0 of a 20-item list
        items = list(range(n_major)) + list(range(10, 10 + 20 - n_major))
        values.append(c_kl(p, items, gm))
    assert all(values[i + 1] >= values[i] - 1e-12 for i in range(len(values) - 1))


def test_ckl_length_mismatch():
    gm = one_hot_membership([0, 1], 2)
    with pytest.raises(ValueError):
        c_kl(np.array([1.0]), [0], gm)


# --- drift buckets -----------------------------------------------------------------

def test_bucket_full_and_empty():
    eta = np.array([0.2, 1.0, 3.0])
    vals = {"m": np.array([1.0, 2.0, 3.0])}
    rows = drift_bucket_report(vals, eta, thresholds=(0.0, 2.0, 5.0))
    assert rows[0].count == 3 and rows[0].means["m"] == pytest.approx(2.0)
    assert rows[1].count == 1 and rows[1].means["m"] == pytest.approx(3.0)
    assert rows[2].count == 0 and rows[2].means == {}


def test_bucket_strict_filter():
    eta = np.array([1.0, 3.0])
    vals = {"m": np.array([10.0, 20.0])}
    rows = drift_bucket_report(vals, eta, thresholds=(2.0,))
    assert rows[0].count == 1 and rows[0].means["m"] == 20.0


# --- calibration re-ranking -----------------------------------------------------------

def test_calibration_lambda_zero_pure_relevance():
    gm = one_hot_membership([0, 0, 1, 1], 2)
    cands = np.array([0, 1, 2, 3])
    scores = np.array([0.1, 0.9, 0.5, 0.5])
    rl = calibration_rerank(cands, scores, np.array([0.5, 0.5]), gm, lam=0.0, k=4)
    assert rl.items.tolist() == [1, 2, 3, 0]  # ties by ascending id


def test_calibration_lambda_one_matches_greedy_oracle():
    gm = one_hot_membership([0, 0, 1, 1], 2)
    cands = np.array([0, 1, 2, 3])
    scores = np.zeros(4)
    p = np.array([0.5, 0.5])
    rl = calibration_rerank(cands, scores, p, gm, lam=1.0, k=4)
    # oracle: greedy minimization of the divergence at each step
    chosen = []
    remaining = [0, 1, 2, 3]
    for _ in range(4):
        best, best_v = None, None
        for c in remaining:
            v = c_kl(p, chosen + [c], gm)
            if best_v is None or v < best_v - 1e-12 or (abs(v - best_v) <= 1e-12 and c < best):
                best, best_v = c, v
        chosen.append(best)
        remaining.remove(best)
    assert rl.items.tolist() == chosen


def test_calibration_hand_traced_and_exhaustive():
    # 4 candidates, 2 groups, hand-set scores, lambda 0.5, K 2: the greedy
    # choice at each step must match exhaustive enumeration of the step
    # objective over all remaining candidates.
    gm = one_hot_membership([0, 0, 1, 1], 2)
    cands = np.array([0, 1, 2, 3])
    scores = np.array([0.8, 0.75, 0.7, 0.2])
    p = np.array([0.5, 0.5])
    lam = 0.5
    rl = calibration_rerank(cands, scores, p, gm, lam=lam, k=2)

    def step_value(chosen, c):
        sc = sum(scores[i] for i in chosen) + scores[c]
        return (1 - lam) * sc - lam * c_kl(p, chosen + [c], gm)

    chosen = []
    for _ in range(2):
        options = [c for c in range(4) if c not in chosen]
        vals = [(step_value(chosen, c), -c) for c in options]
        best = options[int(np.argmax([v for v, _ in vals]))]
        # tie-break by smaller id
        best_v = max(v for v, _ in vals)
        tied = [c for c, (v, _) in zip(options, vals) if abs(v - best_v) < 1e-15]
        chosen.append(min(tied))
    assert rl.items.tolist() == chosen


def test_calibration_matches_rank_single_at_lambda_zero():
    rng = np.random.default_rng(8)
    gm = one_hot_membership(rng.integers(0, 3, size=12).tolist(), 3)
    cands = np.arange(12)
    scores = rng.random(12)
    p = np.array([0.4, 0.3, 0.3])
    rl = calibration_rerank(cands, scores, p, gm, lam=0.0, k=6)
    order = np.lexsort((cands, -scores))[:6]
    assert rl.items.tolist() == cands[order].tolist()


def test_calibration_lambda_validation():
    gm = one_hot_membership([0], 1)
    with pytest.raises(ValueError):
        calibration_rerank(np.array([0]), np.array([1.0]), np.array([1.0]), gm, 1.5, 1)


# --- report assembly -------------------------------------------------------------------

def test_evaluate_rankings_population_and_summary():
    gm = one_hot_membership([0, 0, 1, 1], 2)
    lists = [
        RankedList(0, np.array([0, 1, 2, 3]), np.array([4.0, 3.0, 2.0, 1.0])),
        RankedList(1, np.array([3, 2, 1, 0]), np.array([4.0, 3.0, 2.0, 1.0])),
        RankedList(9, np.array([0, 1, 2, 3]), np.array([1.0, 1.0, 1.0, 1.0])),
    ]
    relevant = {0: {0}, 1: {0}}  # user 9 not evaluated
    hists = {0: np.array([0.5, 0.5]), 1: np.array([1.0, 0.0])}
    etas = {0: 0.1, 1: 2.0}
    report = evaluate_rankings(lists, relevant, hists, gm, etas, k_list=(1, 4), ckl_k=4)
    assert report.summary["n_users"] == 2
    assert report.per_user["recall@1"].tolist() == [1.0, 0.0]
    assert report.per_user["recall@4"].tolist() == [1.0, 1.0]
    assert report.summary["recall@4"] == 1.0
    assert len(report.buckets) == 6
