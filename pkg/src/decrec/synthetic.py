"""Synthetic interaction generator with controllable interest drift.

Each user draws a sequence of clicks: a group is sampled from the user's
preference vector, then an item from that group (optionally weighted by a
per-item quality factor). Preferences switch from the train vector to the
test vector at a configurable point in the sequence, so drifting users show
measurable drift inside their training history as well as at test time.

Timestamps interleave users (t = position * n_users + user), so the global
chronological split cuts every user's sequence at the same fractions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import InteractionSet


class SyntheticConfigError(ValueError):
    pass


def _as_pref_matrix(pref, n_users: int, n_groups: int, name: str) -> np.ndarray:
    arr = np.asarray(pref, dtype=np.float64)
    if arr.ndim == 1:
        arr = np.tile(arr, (n_users, 1))
    if arr.shape != (n_users, n_groups):
        raise SyntheticConfigError(f"{name} must have shape ({n_users}, {n_groups})")
    if (arr < -1e-12).any() or not np.allclose(arr.sum(axis=1), 1.0, atol=1e-9):
        raise SyntheticConfigError(f"{name} rows must be distributions")
    return arr


@dataclass
class SyntheticConfig:
    n_users: int
    n_items: int
    n_groups: int
    interactions_per_user: int
    train_pref: object  # (N,) shared or (U, N) per-user
    test_pref: object = None  # defaults to train_pref (no drift)
    drift_start: float = 0.5  # sequence fraction where test_pref takes over
    quality_sigma: float = 0.0  # log-scale spread of within-group item draws
    quality_mode: str = "sampled"  # "sampled" (log-normal) or "ladder" (fixed spectrum)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_users, self.n_items, self.n_groups,
               self.interactions_per_user) <= 0:
            raise SyntheticConfigError("counts must be positive")
        if self.n_items < self.n_groups:
            raise SyntheticConfigError(
                f"{self.n_groups} groups but only {self.n_items} items: "
                "some group would have no items"
            )
        if not 0.0 <= self.drift_start <= 1.0:
            raise SyntheticConfigError("drift_start must lie in [0, 1]")
        if self.quality_mode not in ("sampled", "ladder"):
            raise SyntheticConfigError("quality_mode must be 'sampled' or 'ladder'")
        self.train_pref = _as_pref_matrix(
            self.train_pref, self.n_users, self.n_groups, "train_pref")
        tp = self.train_pref if self.test_pref is None else self.test_pref
        self.test_pref = _as_pref_matrix(tp, self.n_users, self.n_groups, "test_pref")


@dataclass
class SyntheticData:
    interactions: InteractionSet
    tags_per_item: list
    groups: list
    drifted: np.ndarray  # (U,) bool: test_pref differs from train_pref
    quality: np.ndarray  # (I,)
    config: SyntheticConfig = field(repr=False, default=None)


def synthesize_dataset(config: SyntheticConfig) -> SyntheticData:
    """Draw the full interaction log; deterministic for a given seed."""
    u_count, i_count, n_groups = config.n_users, config.n_items, config.n_groups
    t_per_user = config.interactions_per_user
    rng = np.random.default_rng(config.seed)

    group_of_item = np.arange(i_count) % n_groups
    if config.quality_mode == "ladder":
        # Deterministic log-spaced spectrum, identical within every group, so
        # group-level quality luck cannot differ across seeds.
        quality = np.empty(i_count)
        for g in range(n_groups):
            members = np.flatnonzero(group_of_item == g)
            z = np.linspace(-2.0, 2.0, members.size) if members.size > 1 else np.zeros(1)
            quality[members] = np.exp(config.quality_sigma * z)
    else:
        quality = np.exp(config.quality_sigma * rng.standard_normal(i_count))
    items_by_group = [np.flatnonzero(group_of_item == g) for g in range(n_groups)]
    cdf_by_group = []
    for g in range(n_groups):
        w = quality[items_by_group[g]]
        cdf_by_group.append(np.cumsum(w) / w.sum())

    n_events = u_count * t_per_user
    users = np.repeat(np.arange(u_count, dtype=np.int64), t_per_user)
    pos = np.tile(np.arange(t_per_user, dtype=np.int64), u_count)
    pre_drift = pos < int(np.ceil(config.drift_start * t_per_user))
    prefs = np.where(pre_drift[:, None], config.train_pref[users], config.test_pref[users])

    draws = rng.random(n_events)
    groups_drawn = (draws[:, None] > np.cumsum(prefs, axis=1)).sum(axis=1)
    groups_drawn = np.minimum(groups_drawn, n_groups - 1)

    items = np.empty(n_events, dtype=np.int64)
    for g in range(n_groups):
        mask = groups_drawn == g
        if not mask.any():
            continue
        r = rng.random(int(mask.sum()))
        items[mask] = items_by_group[g][np.searchsorted(cdf_by_group[g], r)]

    ts = pos * u_count + users
    iset = InteractionSet(
        users, items,
        np.full(n_events, 5.0), ts.astype(np.int64),
        [str(u) for u in range(u_count)], [str(i) for i in range(i_count)],
    )
    tags = [[f"g{group_of_item[i]}"] for i in range(i_count)]
    groups = [f"g{g}" for g in range(n_groups)]
    drifted = ~np.all(np.isclose(config.train_pref, config.test_pref), axis=1)
    return SyntheticData(iset, tags, groups, drifted, quality, config)


def write_raw_files(data: SyntheticData, interactions_path, item_groups_path):
    """Emit the generator output in the raw-dataset file formats."""
    iset = data.interactions
    with open(interactions_path, "w", encoding="utf-8") as fh:
        for u, i, r, t in zip(iset.user, iset.item, iset.rating, iset.ts):
            fh.write(f"{iset.user_ids[u]}\t{iset.item_ids[i]}\t{r:g}\t{t}\n")
    with open(item_groups_path, "w", encoding="utf-8") as fh:
        for i, tags in enumerate(data.tags_per_item):
            fh.write(f"{iset.item_ids[i]}\t{'|'.join(tags)}\n")
