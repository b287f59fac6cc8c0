"""Final ranking: drift-weighted fusion of the conventional and
deconfounded scores, then deterministic top-K truncation.

Ties are broken by ascending item id so identical inputs always produce
identical lists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .training import Model


def fuse_scores(y_rs, y_de, eta_hat):
    """(1 - eta_hat) * y_rs + eta_hat * y_de."""
    eh = np.asarray(eta_hat, dtype=np.float64)
    if ((eh < 0.0) | (eh > 1.0)).any():
        raise ValueError(f"eta_hat must lie in [0, 1], got {eta_hat}")
    return (1.0 - eh) * np.asarray(y_rs) + eh * np.asarray(y_de)


@dataclass
class RankedList:
    """Ordered top-K items for one user, scores non-increasing."""

    user_id: int
    items: np.ndarray
    scores: np.ndarray
    candidates: str = "all items minus training interactions; ties by item id"


@dataclass
class RankingContext:
    """Feature arrays shared by every ranking call."""

    user_arr: tuple  # (ids, vals) of shape (U, .)
    item_arr: tuple  # (ids, vals) of shape (I, .)

    @property
    def n_items(self) -> int:
        return self.item_arr[0].shape[0]


def _order_and_cut(candidates: np.ndarray, scores: np.ndarray, k: int):
    order = np.lexsort((candidates, -scores))
    top = order[: max(0, k)]
    return candidates[top], scores[top]


def rank_topk(user: int, rs_model: Model, de_model: Model, eta_hat: float,
              candidates: np.ndarray, k: int, ctx: RankingContext) -> RankedList:
    """Score candidates with both models, fuse by the user's drift weight, cut K."""
    y_rs = rs_model.score_users([user], ctx.user_arr, ctx.item_arr)[0][candidates]
    y_de = de_model.score_users([user], ctx.user_arr, ctx.item_arr)[0][candidates]
    fused = fuse_scores(y_rs, y_de, eta_hat)
    items, scores = _order_and_cut(candidates, fused, k)
    return RankedList(user, items, scores)


def rank_single(user: int, model: Model, candidates: np.ndarray, k: int,
                ctx: RankingContext) -> RankedList:
    y = model.score_users([user], ctx.user_arr, ctx.item_arr)[0][candidates]
    items, scores = _order_and_cut(candidates, y, k)
    return RankedList(user, items, scores)


def rank_users(users, models, weights, excluded, k: int, ctx: RankingContext,
               batch: int = 256):
    """Bulk ranking in user-id order.

    ``models`` is (model,) for single-model ranking or (rs, de) with
    per-user fusion ``weights``; ``excluded[u]`` lists the items removed
    from u's candidate set.
    """
    users = np.asarray(users, dtype=np.int64)
    item_range = np.arange(ctx.n_items)
    out = []
    for lo in range(0, users.size, batch):
        chunk = users[lo:lo + batch]
        mats = [m.score_users(chunk, ctx.user_arr, ctx.item_arr) for m in models]
        for row, u in enumerate(chunk):
            if len(models) == 2:
                scores = fuse_scores(mats[0][row], mats[1][row], weights[u])
            else:
                scores = mats[0][row].copy()
            mask = np.ones(ctx.n_items, dtype=bool)
            mask[excluded[u]] = False
            cands = item_range[mask]
            items, sc = _order_and_cut(cands, scores[mask], k)
            out.append(RankedList(int(u), items, sc))
    return out


def write_rankings(path, ranked_lists):
    """Delimited export: user, rank, item, score."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user\trank\titem\tscore\n")
        for rl in ranked_lists:
            for pos, (i, s) in enumerate(zip(rl.items, rl.scores), start=1):
                fh.write(f"{rl.user_id}\t{pos}\t{i}\t{s:.12g}\n")
