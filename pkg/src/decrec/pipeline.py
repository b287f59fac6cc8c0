"""End-to-end dataset preparation and run orchestration helpers.

Preparation composes ingestion, k-core filtering, id compaction,
binarization, the chronological split, group memberships, the confounder
prior, and drift scores. The prepared state can be saved to and reloaded
from a directory of delimited-text files, which is also the CLI's
interchange format between pipeline stages.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import corpus
from .backdoor import BackdoorConfig
from .confounder import ConfounderPrior, DriftTable, confounder_prior, drift_table, user_group_distribution
from .corpus import (
    DatasetSplit,
    FeatureSchema,
    GroupMembership,
    InteractionSet,
    binarize,
    chronological_split,
    compact,
    drop_group_features,
    group_membership,
    item_feature_arrays,
    user_feature_arrays,
)
from .inference import RankingContext
from .training import TrainData


@dataclass
class Prepared:
    split: DatasetSplit
    schema: FeatureSchema
    membership: GroupMembership
    tags_per_item: list
    prior: ConfounderPrior
    drift: DriftTable
    meta: dict

    @property
    def dbar(self) -> np.ndarray:
        return self.prior.expectation


def prepare(raw: InteractionSet, tags_by_raw_id: dict, *, k_core: int = 20,
            threshold: float = 4.0, ratios=(0.8, 0.1, 0.1), alpha: float = 0.3,
            groups=None) -> Prepared:
    """Filter, compact, binarize, split, and derive confounder/drift state.

    ``tags_by_raw_id`` maps raw item ids to group-tag lists; items surviving
    the k-core filter must all be covered.
    """
    filtered = corpus.apply_k_core(raw, k_core)
    if len(filtered) == 0:
        raise corpus.EmptyDatasetError(f"{k_core}-core filtering removed every interaction")
    cset = compact(filtered)
    tags = []
    for raw_id in cset.item_ids:
        if raw_id not in tags_by_raw_id:
            raise corpus.SchemaError(f"item {raw_id!r} has no group metadata")
        tags.append(list(tags_by_raw_id[raw_id]))
    bset = binarize(cset, threshold)
    split = chronological_split(bset, ratios)
    membership = group_membership(tags, groups)
    prior = confounder_prior(split.history, membership)
    drift = drift_table(split.history, membership, alpha)
    meta = {
        "n_users": cset.n_users,
        "n_items": cset.n_items,
        "n_groups": membership.n_groups,
        "n_interactions": len(cset),
        "k_core": k_core,
        "threshold": threshold,
        "ratios": list(ratios),
        "alpha": alpha,
    }
    schema = FeatureSchema(cset.n_users, cset.n_items, membership.n_groups)
    return Prepared(split, schema, membership, tags, prior, drift, meta)


def positives_by_user(iset: InteractionSet, n_users: int) -> list:
    out = [[] for _ in range(n_users)]
    if iset.label is None:
        raise ValueError("interaction set not binarized")
    for u, i, lab in zip(iset.user, iset.item, iset.label):
        if lab:
            out[u].append(i)
    return [np.unique(np.asarray(v, dtype=np.int64)) for v in out]


def _reachable_relevant(prep: Prepared, part: InteractionSet):
    """Per-user positives of a split, minus items already seen in training.

    Items the user interacted with during training are not candidates under
    the all-ranking protocol, so they cannot be counted as reachable
    relevants either.
    """
    pos = positives_by_user(part, prep.split.n_users)
    users, relevant = [], []
    for u in range(prep.split.n_users):
        if pos[u].size == 0 or len(prep.split.history[u]) == 0:
            continue
        rel = np.setdiff1d(pos[u], prep.split.interacted[u])
        if rel.size == 0:
            continue
        users.append(u)
        relevant.append(rel)
    return np.asarray(users, dtype=np.int64), relevant


def build_train_data(prep: Prepared, variant: str = "baseline") -> TrainData:
    """Feature arrays plus validation targets for one training run."""
    schema = prep.schema
    membership = prep.membership
    if variant == "unawareness":
        schema = drop_group_features(schema)
        membership = None
    user_arr = user_feature_arrays(schema)
    item_arr = item_feature_arrays(schema, membership)
    val_users, val_relevant = _reachable_relevant(prep, prep.split.validation)
    return TrainData(prep.split, schema, user_arr, item_arr, val_users, val_relevant)


def backdoor_config(prep: Prepared, operator: str) -> BackdoorConfig:
    return BackdoorConfig(operator, prep.dbar)


def ranking_context(data: TrainData) -> RankingContext:
    return RankingContext(data.user_arr, data.item_arr)


def test_targets(prep: Prepared):
    """(users, relevant lists) for evaluation on the test split."""
    return _reachable_relevant(prep, prep.split.test)


def history_distributions(prep: Prepared, users) -> dict:
    return {
        int(u): user_group_distribution(prep.split.history[u], prep.membership)
        for u in users
    }


# ---------------------------------------------------------------------------
# Prepared-directory persistence (the CLI interchange format).
# ---------------------------------------------------------------------------


def _write_interactions(path, iset: InteractionSet):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user\titem\trating\tts\tlabel\n")
        for u, i, r, t, lab in zip(iset.user, iset.item, iset.rating, iset.ts, iset.label):
            fh.write(f"{u}\t{i}\t{r:g}\t{t}\t{lab}\n")


def _read_interactions(path, user_ids, item_ids) -> InteractionSet:
    users, items, ratings, tss, labels = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            u, i, r, t, lab = line.rstrip("\n").split("\t")
            users.append(int(u)); items.append(int(i))
            ratings.append(float(r)); tss.append(int(t)); labels.append(int(lab))
    return InteractionSet(
        np.asarray(users, dtype=np.int64), np.asarray(items, dtype=np.int64),
        np.asarray(ratings), np.asarray(tss, dtype=np.int64),
        user_ids, item_ids, np.asarray(labels, dtype=np.int8),
    )


def save_prepared(out_dir, prep: Prepared):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(prep.meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for name, part in (("train", prep.split.train), ("validation", prep.split.validation),
                       ("test", prep.split.test)):
        _write_interactions(os.path.join(out_dir, f"interactions_{name}.tsv"), part)
    with open(os.path.join(out_dir, "users.tsv"), "w", encoding="utf-8") as fh:
        for u, raw in enumerate(prep.split.train.user_ids):
            fh.write(f"{u}\t{raw}\n")
    with open(os.path.join(out_dir, "items.tsv"), "w", encoding="utf-8") as fh:
        for i, raw in enumerate(prep.split.train.item_ids):
            fh.write(f"{i}\t{raw}\n")
    with open(os.path.join(out_dir, "item_groups.tsv"), "w", encoding="utf-8") as fh:
        for i, tags in enumerate(prep.tags_per_item):
            fh.write(f"{i}\t{'|'.join(tags)}\n")
    with open(os.path.join(out_dir, "groups.tsv"), "w", encoding="utf-8") as fh:
        for n, g in enumerate(prep.membership.groups):
            fh.write(f"{n}\t{g}\n")
    with open(os.path.join(out_dir, "dbar.tsv"), "w", encoding="utf-8") as fh:
        for n, x in enumerate(prep.dbar):
            fh.write(f"{n}\t{x:.17g}\n")
    from .confounder import write_drift

    write_drift(os.path.join(out_dir, "drift.tsv"), prep.drift)


def load_prepared(out_dir) -> Prepared:
    def need(name):
        path = os.path.join(out_dir, name)
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing prepared file: {path}")
        return path

    with open(need("meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    user_ids = [line.rstrip("\n").split("\t")[1]
                for line in open(need("users.tsv"), encoding="utf-8")]
    item_ids = [line.rstrip("\n").split("\t")[1]
                for line in open(need("items.tsv"), encoding="utf-8")]
    train = _read_interactions(need("interactions_train.tsv"), user_ids, item_ids)
    val = _read_interactions(need("interactions_validation.tsv"), user_ids, item_ids)
    test = _read_interactions(need("interactions_test.tsv"), user_ids, item_ids)

    n_users = len(user_ids)
    per_user_items = [[] for _ in range(n_users)]
    history = [[] for _ in range(n_users)]
    for u, i, lab in zip(train.user, train.item, train.label):
        per_user_items[u].append(i)
        if lab:
            history[u].append(i)
    split = DatasetSplit(
        train, val, test,
        [np.asarray(v, dtype=np.int64) for v in history],
        [np.unique(np.asarray(v, dtype=np.int64)) for v in per_user_items],
    )
    tags = [None] * len(item_ids)
    for line in open(need("item_groups.tsv"), encoding="utf-8"):
        i, tag_str = line.rstrip("\n").split("\t")
        tags[int(i)] = tag_str.split("|")
    groups = [line.rstrip("\n").split("\t")[1]
              for line in open(need("groups.tsv"), encoding="utf-8")]
    membership = group_membership(tags, groups)
    prior = confounder_prior(split.history, membership)
    from .confounder import read_drift

    etas, eta_hats = read_drift(need("drift.tsv"))
    drift = DriftTable(etas, eta_hats, float(etas.min()), float(etas.max()),
                       float(meta.get("alpha", 0.3)))
    schema = FeatureSchema(n_users, len(item_ids), membership.n_groups)
    return Prepared(split, schema, membership, tags, prior, drift, meta)
