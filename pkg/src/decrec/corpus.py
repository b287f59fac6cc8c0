"""Interaction ingestion, filtering, splitting, and feature construction.

All operations are pure: they take an interaction set and return a new one.
Interaction sets keep their id registries (raw id per contiguous index), so
filtered sets can be compacted later without losing the mapping back to the
source files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class CorpusError(Exception):
    """Base class for dataset construction failures."""


class ParseError(CorpusError):
    pass


class EmptyDatasetError(CorpusError):
    pass


class SplitError(CorpusError):
    pass


class SamplingError(CorpusError):
    pass


class SchemaError(CorpusError):
    pass


@dataclass
class InteractionSet:
    """Columnar (user, item, rating, timestamp[, label]) events.

    ``user``/``item`` are contiguous indices into the registries; labels are
    None until :func:`binarize` assigns them.
    """

    user: np.ndarray
    item: np.ndarray
    rating: np.ndarray
    ts: np.ndarray
    user_ids: list
    item_ids: list
    label: np.ndarray | None = None

    def __len__(self) -> int:
        return self.user.shape[0]

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    def take(self, index: np.ndarray) -> "InteractionSet":
        return InteractionSet(
            self.user[index], self.item[index], self.rating[index], self.ts[index],
            self.user_ids, self.item_ids,
            None if self.label is None else self.label[index],
        )


def load_interactions(path, delimiter: str | None = None, header: bool = False) -> InteractionSet:
    """Parse a delimited text file of (user, item, rating, timestamp) rows.

    ``delimiter=None`` auto-detects tab, '::', or comma per file. Raw ids are
    re-indexed contiguously in order of first appearance; the mapping is kept
    on the returned set.
    """
    users, items, ratings, tss = [], [], [], []
    user_index: dict = {}
    item_index: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    start = 1 if header else 0
    for lineno, line in enumerate(lines[start:], start=start + 1):
        if not line.strip():
            continue
        sep = delimiter
        if sep is None:
            sep = "\t" if "\t" in line else ("::" if "::" in line else ",")
        parts = line.split(sep)
        if len(parts) < 4:
            raise ParseError(f"{path}: line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            rating = float(parts[2])
            ts = int(float(parts[3]))
        except ValueError as exc:
            raise ParseError(f"{path}: line {lineno}: {exc}") from None
        u_raw, i_raw = parts[0].strip(), parts[1].strip()
        users.append(user_index.setdefault(u_raw, len(user_index)))
        items.append(item_index.setdefault(i_raw, len(item_index)))
        ratings.append(rating)
        tss.append(ts)
    if not users:
        raise EmptyDatasetError(f"{path}: no interactions")
    return InteractionSet(
        np.asarray(users, dtype=np.int64),
        np.asarray(items, dtype=np.int64),
        np.asarray(ratings, dtype=np.float64),
        np.asarray(tss, dtype=np.int64),
        list(user_index), list(item_index),
    )


def apply_k_core(iset: InteractionSet, k: int) -> InteractionSet:
    """Iteratively drop users/items with fewer than k interactions (fixed point)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    keep = np.ones(len(iset), dtype=bool)
    while True:
        uc = np.bincount(iset.user[keep], minlength=iset.n_users)
        ic = np.bincount(iset.item[keep], minlength=iset.n_items)
        bad = keep & ((uc[iset.user] < k) | (ic[iset.item] < k))
        if not bad.any():
            break
        keep &= ~bad
    return iset.take(np.flatnonzero(keep))


def compact(iset: InteractionSet) -> InteractionSet:
    """Re-index to the users/items that actually occur (ascending old index)."""
    u_old = np.unique(iset.user)
    i_old = np.unique(iset.item)
    u_map = np.full(iset.n_users, -1, dtype=np.int64)
    i_map = np.full(iset.n_items, -1, dtype=np.int64)
    u_map[u_old] = np.arange(u_old.size)
    i_map[i_old] = np.arange(i_old.size)
    return InteractionSet(
        u_map[iset.user], i_map[iset.item], iset.rating.copy(), iset.ts.copy(),
        [iset.user_ids[j] for j in u_old], [iset.item_ids[j] for j in i_old],
        None if iset.label is None else iset.label.copy(),
    )


def binarize(iset: InteractionSet, threshold: float) -> InteractionSet:
    """label := 1 if rating >= threshold else 0; rows preserved."""
    return replace(iset, label=(iset.rating >= threshold).astype(np.int8))


@dataclass
class DatasetSplit:
    """Chronological train/validation/test subsets plus per-user train views."""

    train: InteractionSet
    validation: InteractionSet
    test: InteractionSet
    history: list | None  # per-user time-ordered positive train items
    interacted: list  # per-user sorted unique train items (any label)

    @property
    def n_users(self) -> int:
        return self.train.n_users

    @property
    def n_items(self) -> int:
        return self.train.n_items


def chronological_split(iset: InteractionSet, ratios=(0.8, 0.1, 0.1)) -> DatasetSplit:
    """Globally sort by timestamp (ties: user then item) and cut 80/10/10.

    Train histories are built from train positives only, so the input should
    normally be binarized first; if it is not, ``history`` is None.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    n = len(iset)
    if n < 3:
        raise SplitError(f"need at least 3 interactions to split, got {n}")
    order = np.lexsort((iset.item, iset.user, iset.ts))
    n_train = math.floor(ratios[0] * n)
    n_val = math.floor(ratios[1] * n)
    train = iset.take(order[:n_train])
    val = iset.take(order[n_train:n_train + n_val])
    test = iset.take(order[n_train + n_val:])

    interacted = [np.empty(0, dtype=np.int64)] * iset.n_users
    per_user_items: list = [[] for _ in range(iset.n_users)]
    for u, i in zip(train.user, train.item):
        per_user_items[u].append(i)
    interacted = [np.unique(np.asarray(v, dtype=np.int64)) for v in per_user_items]

    history = None
    if train.label is not None:
        history = [[] for _ in range(iset.n_users)]
        for u, i, lab in zip(train.user, train.item, train.label):
            if lab:
                history[u].append(i)
        history = [np.asarray(v, dtype=np.int64) for v in history]
    return DatasetSplit(train, val, test, history, interacted)


@dataclass
class TrainingInstances:
    user: np.ndarray
    item: np.ndarray
    label: np.ndarray

    def __len__(self) -> int:
        return self.user.shape[0]


def sample_negatives(split: DatasetSplit, ratio: int, seed: int) -> TrainingInstances:
    """Pair every positive train interaction with ``ratio`` uniform negatives.

    Negatives are drawn from items the user never interacted with in the
    training split; deterministic for a given seed.
    """
    if ratio < 1:
        raise ValueError("ratio must be >= 1")
    if split.train.label is None:
        raise ValueError("training split has no labels; binarize first")
    n_items = split.n_items
    pos_mask = split.train.label == 1
    pos_user = split.train.user[pos_mask]
    pos_item = split.train.item[pos_mask]
    n_pos_by_user = np.bincount(pos_user, minlength=split.n_users)

    rng = np.random.default_rng(seed)
    neg_user_parts, neg_item_parts = [], []
    for u in range(split.n_users):
        need = int(n_pos_by_user[u]) * ratio
        if need == 0:
            continue
        allowed = np.setdiff1d(np.arange(n_items), split.interacted[u], assume_unique=False)
        if allowed.size == 0:
            raise SamplingError(f"user {u} interacted with every item; cannot sample negatives")
        picks = allowed[rng.integers(0, allowed.size, size=need)]
        neg_user_parts.append(np.full(need, u, dtype=np.int64))
        neg_item_parts.append(picks)
    neg_user = np.concatenate(neg_user_parts) if neg_user_parts else np.empty(0, np.int64)
    neg_item = np.concatenate(neg_item_parts) if neg_item_parts else np.empty(0, np.int64)
    user = np.concatenate([pos_user, neg_user])
    item = np.concatenate([pos_item, neg_item])
    label = np.concatenate([
        np.ones(pos_user.size, dtype=np.float64),
        np.zeros(neg_user.size, dtype=np.float64),
    ])
    return TrainingInstances(user, item, label)


# ---------------------------------------------------------------------------
# Group membership and the feature schema.
# ---------------------------------------------------------------------------


@dataclass
class GroupMembership:
    """Per-item distribution over groups; rows sum to 1."""

    q: np.ndarray  # (I, N)
    groups: list

    @property
    def n_groups(self) -> int:
        return len(self.groups)


def group_membership(tags_per_item, groups=None) -> GroupMembership:
    """Uniform membership over each item's tags.

    ``tags_per_item`` is indexed by item id. With ``groups=None`` the group
    registry is the sorted set of observed tags; otherwise tags outside the
    given registry are a schema error.
    """
    if groups is None:
        seen = sorted({t for tags in tags_per_item for t in tags})
        groups = list(seen)
    index = {g: n for n, g in enumerate(groups)}
    q = np.zeros((len(tags_per_item), len(groups)), dtype=np.float64)
    for i, tags in enumerate(tags_per_item):
        if not tags:
            raise SchemaError(f"item {i} has no group tags")
        for t in tags:
            if t not in index:
                raise SchemaError(f"item {i}: unknown group tag {t!r}")
            q[i, index[t]] = 1.0 / len(set(tags))
        # Re-normalize in case of duplicate tags in the input row.
        q[i] /= q[i].sum()
    return GroupMembership(q, list(groups))


def read_item_tag_map(path, delimiter: str = "\t") -> dict:
    """Item metadata file: item_id <sep> pipe-separated tags, one row per item."""
    tags: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(delimiter)
            if len(parts) < 2:
                raise ParseError(f"{path}: line {lineno}: expected item and tags")
            tags[parts[0].strip()] = [t for t in parts[1].split("|") if t]
    return tags


@dataclass(frozen=True)
class FeatureSchema:
    """Global feature-id layout: [users | items | item-group fields].

    Group fields are item-side features valued by the item's membership
    weight; dropping them (unawareness) removes the trailing block.
    """

    n_users: int
    n_items: int
    n_groups: int
    include_groups: bool = True

    @property
    def n_features(self) -> int:
        return self.n_users + self.n_items + (self.n_groups if self.include_groups else 0)

    def user_feature(self, u: int) -> int:
        return u

    def item_feature(self, i: int) -> int:
        return self.n_users + i

    def group_feature(self, n: int) -> int:
        if not self.include_groups:
            raise SchemaError("schema has no group features")
        return self.n_users + self.n_items + n


def drop_group_features(schema: FeatureSchema) -> FeatureSchema:
    """Schema for the unawareness baseline: item group fields removed."""
    return replace(schema, include_groups=False)


def user_feature_arrays(schema: FeatureSchema):
    """(ids, vals) of shape (U, 1): each user's one active ID feature."""
    ids = np.arange(schema.n_users, dtype=np.int64)[:, None]
    vals = np.ones((schema.n_users, 1), dtype=np.float64)
    return ids, vals


def item_feature_arrays(schema: FeatureSchema, membership: GroupMembership | None):
    """(ids, vals) of shape (I, W): item ID plus its group fields, zero-padded."""
    n_items = schema.n_items
    if schema.include_groups:
        if membership is None:
            raise SchemaError("schema includes group features but no membership given")
        max_tags = int((membership.q > 0).sum(axis=1).max())
    else:
        max_tags = 0
    width = 1 + max_tags
    ids = np.zeros((n_items, width), dtype=np.int64)
    vals = np.zeros((n_items, width), dtype=np.float64)
    ids[:, 0] = schema.n_users + np.arange(n_items)
    vals[:, 0] = 1.0
    if max_tags:
        for i in range(n_items):
            nz = np.flatnonzero(membership.q[i])
            ids[i, 1:1 + nz.size] = schema.n_users + n_items + nz
            vals[i, 1:1 + nz.size] = membership.q[i, nz]
    return ids, vals
