"""Ranking accuracy metrics, the KL bias-amplification measure, drift-bucket
tables, and the calibration re-ranking baseline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import GroupMembership
from .inference import RankedList

CKL_SMOOTH_BETA = 0.01
DRIFT_THRESHOLDS = (0.0, 0.5, 1.0, 2.0, 3.0, 4.0)
CALIBRATION_LAMBDA_GRID = tuple(round(0.01 * i, 2) for i in range(1, 51))


def recall_at_k(ranked_items, relevant, k: int) -> float:
    """|top-k intersect relevant| / |relevant|."""
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    hits = sum(1 for i in ranked_items[:k] if int(i) in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked_items, relevant, k: int) -> float:
    """Binary gains, 1/log2(rank+1) discounts, ideal DCG over min(|rel|, k) hits."""
    relevant = set(int(i) for i in relevant)
    if not relevant:
        raise ValueError("relevant set is empty")
    dcg = 0.0
    for rank, i in enumerate(ranked_items[:k], start=1):
        if int(i) in relevant:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = sum(1.0 / np.log2(r + 1) for r in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


def recommended_distribution(items, membership: GroupMembership) -> np.ndarray:
    items = np.asarray(items, dtype=np.int64)
    if items.size == 0:
        raise ValueError("empty recommendation list")
    return membership.q[items].mean(axis=0)


def c_kl(history_dist, items, membership: GroupMembership,
         beta: float = CKL_SMOOTH_BETA) -> float:
    """KL(history || smoothed recommended distribution), natural log.

    The recommended distribution q is mixed with the history distribution p
    as (1-beta) q + beta p, which keeps the divergence finite when the list
    misses a group the user has clicked.
    """
    p = np.asarray(history_dist, dtype=np.float64)
    if p.shape[0] != membership.n_groups:
        raise ValueError("history distribution length != number of groups")
    q = recommended_distribution(items, membership)
    qt = (1.0 - beta) * q + beta * p
    mask = p > 0.0
    return float((p[mask] * (np.log(p[mask]) - np.log(qt[mask]))).sum())


@dataclass
class BucketRow:
    threshold: float
    count: int
    means: dict  # metric name -> mean over the bucket (absent if count == 0)


def drift_bucket_report(per_user_metrics: dict, eta: np.ndarray,
                        thresholds=DRIFT_THRESHOLDS) -> list:
    """Mean of each metric over the users with eta strictly above each threshold."""
    eta = np.asarray(eta, dtype=np.float64)
    rows = []
    for t in thresholds:
        mask = eta > t
        count = int(mask.sum())
        means = {}
        if count:
            means = {name: float(np.asarray(vals)[mask].mean())
                     for name, vals in per_user_metrics.items()}
        rows.append(BucketRow(float(t), count, means))
    return rows


def calibration_rerank(candidates, scores, history_dist, membership: GroupMembership,
                       lam: float, k: int) -> RankedList:
    """Greedy list construction trading relevance against calibration.

    At each step the candidate maximizing
    (1 - lam) * sum(scores of list + c) - lam * C_KL(history, dist(list + c))
    is appended; ties break by ascending item id.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    candidates = np.asarray(candidates, dtype=np.int64)
    scores = np.asarray(scores, dtype=np.float64)
    p = np.asarray(history_dist, dtype=np.float64)
    k = min(k, candidates.size)

    chosen: list = []
    chosen_scores: list = []
    free = np.ones(candidates.size, dtype=bool)
    q_sum = np.zeros(membership.n_groups)
    score_sum = 0.0
    cand_q = membership.q[candidates]
    mask_p = p > 0.0
    log_p = np.log(p[mask_p])
    for step in range(k):
        size = len(chosen) + 1
        q_with = (q_sum[None, :] + cand_q) / size  # (C, N)
        qt = (1.0 - CKL_SMOOTH_BETA) * q_with + CKL_SMOOTH_BETA * p[None, :]
        ckl = (p[mask_p][None, :] * (log_p[None, :] - np.log(qt[:, mask_p]))).sum(axis=1)
        value = (1.0 - lam) * (score_sum + scores) - lam * ckl
        value[~free] = -np.inf
        # argmax with ascending-item-id tie break
        best = np.lexsort((candidates, -value))[0]
        chosen.append(candidates[best])
        chosen_scores.append(scores[best])
        score_sum += scores[best]
        q_sum += cand_q[best]
        free[best] = False
    return RankedList(
        -1, np.asarray(chosen, dtype=np.int64), np.asarray(chosen_scores),
        candidates="calibration re-rank; ties by item id",
    )


# ---------------------------------------------------------------------------
# Report assembly.
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    users: np.ndarray
    per_user: dict  # metric -> array aligned with users
    eta: np.ndarray  # aligned with users
    summary: dict
    buckets: list
    meta: dict = field(default_factory=dict)


def evaluate_rankings(ranked_lists, relevant_by_user: dict, history_dists: dict,
                      membership: GroupMembership, eta_by_user: dict,
                      k_list=(10, 20), ckl_k: int = 20) -> EvalReport:
    """Per-user accuracy and calibration metrics plus aggregate summary.

    Only users present in ``relevant_by_user`` (>=1 test positive and a
    nonempty training history) are scored; lists must be at least as long
    as max(k_list, ckl_k).
    """
    users, rows_eta = [], []
    per_user = {f"recall@{k}": [] for k in k_list}
    per_user.update({f"ndcg@{k}": [] for k in k_list})
    per_user["c_kl"] = []
    for rl in ranked_lists:
        u = rl.user_id
        if u not in relevant_by_user:
            continue
        rel = relevant_by_user[u]
        users.append(u)
        rows_eta.append(eta_by_user[u])
        for k in k_list:
            per_user[f"recall@{k}"].append(recall_at_k(rl.items, rel, k))
            per_user[f"ndcg@{k}"].append(ndcg_at_k(rl.items, rel, k))
        per_user["c_kl"].append(
            c_kl(history_dists[u], rl.items[:ckl_k], membership)
        )
    users = np.asarray(users, dtype=np.int64)
    per_user = {name: np.asarray(vals) for name, vals in per_user.items()}
    eta = np.asarray(rows_eta, dtype=np.float64)
    summary = {name: float(vals.mean()) if vals.size else float("nan")
               for name, vals in per_user.items()}
    summary["n_users"] = int(users.size)
    buckets = drift_bucket_report(per_user, eta)
    return EvalReport(users, per_user, eta, summary, buckets)


def write_report(out_dir, report: EvalReport, label: str):
    """summary JSON + per-user tsv + drift-bucket tsv, prefixed by label."""
    import os

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{label}_summary.json"), "w", encoding="utf-8") as fh:
        json.dump({"label": label, "summary": report.summary, "meta": report.meta},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    metrics = sorted(report.per_user)
    with open(os.path.join(out_dir, f"{label}_per_user.tsv"), "w", encoding="utf-8") as fh:
        fh.write("user\teta\t" + "\t".join(metrics) + "\n")
        for row in range(report.users.size):
            vals = "\t".join(f"{report.per_user[m][row]:.12g}" for m in metrics)
            fh.write(f"{report.users[row]}\t{report.eta[row]:.12g}\t{vals}\n")
    with open(os.path.join(out_dir, f"{label}_drift_buckets.tsv"), "w", encoding="utf-8") as fh:
        fh.write("threshold\tcount\t" + "\t".join(metrics) + "\n")
        for b in report.buckets:
            vals = "\t".join(f"{b.means[m]:.12g}" if b.means else "" for m in metrics)
            fh.write(f"{b.threshold:g}\t{b.count}\t{vals}\n")


def read_summary(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
