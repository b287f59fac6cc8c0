"""Per-user group distributions, their interaction-weighted prior, and
interest-drift scores.

Drift is the symmetric KL divergence between the group distributions of the
two time-halves of a user's training history, normalized across users into
[0, 1] for score fusion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import GroupMembership

KL_SMOOTH_EPS = 1e-6


def user_group_distribution(history: np.ndarray, membership: GroupMembership) -> np.ndarray:
    """Mean of the membership rows of the user's clicked items (a simplex vector)."""
    history = np.asarray(history, dtype=np.int64)
    if history.size == 0:
        raise ValueError("empty history has no group distribution")
    return membership.q[history].mean(axis=0)


@dataclass
class ConfounderPrior:
    """Sampled per-user distributions with interaction-count weights."""

    users: np.ndarray  # (U',) user ids with nonempty histories
    d: np.ndarray  # (U', N) per-user distributions
    p: np.ndarray  # (U',) weights |H_u| / sum |H_v|
    expectation: np.ndarray  # (N,) weighted mean distribution


def confounder_prior(histories, membership: GroupMembership) -> ConfounderPrior:
    """Weight each user's distribution by their share of all interactions."""
    users = np.array([u for u, h in enumerate(histories) if len(h) > 0], dtype=np.int64)
    if users.size == 0:
        raise ValueError("no user has a nonempty history")
    counts = np.array([len(histories[u]) for u in users], dtype=np.float64)
    d = np.stack([user_group_distribution(histories[u], membership) for u in users])
    p = counts / counts.sum()
    return ConfounderPrior(users, d, p, p @ d)


def split_history_distributions(history: np.ndarray, membership: GroupMembership):
    """Group distributions of the first floor(|H|/2) items and of the rest."""
    history = np.asarray(history, dtype=np.int64)
    if history.size < 2:
        raise ValueError("need at least 2 items to split a history")
    half = history.size // 2
    return (
        user_group_distribution(history[:half], membership),
        user_group_distribution(history[half:], membership),
    )


def _smooth(d: np.ndarray, eps: float) -> np.ndarray:
    return (1.0 - eps) * d + eps / d.shape[-1]


def symmetric_kl(d1, d2, eps: float = KL_SMOOTH_EPS) -> float:
    """KL(d1||d2) + KL(d2||d1), natural log, after uniform-mixture smoothing."""
    d1 = np.asarray(d1, dtype=np.float64)
    d2 = np.asarray(d2, dtype=np.float64)
    if d1.shape != d2.shape:
        raise ValueError(f"distribution lengths differ: {d1.shape} vs {d2.shape}")
    a = _smooth(d1, eps)
    b = _smooth(d2, eps)
    log_ratio = np.log(a) - np.log(b)
    return float((a * log_ratio).sum() - (b * log_ratio).sum())


def normalize_drift(eta: float, eta_min: float, eta_max: float, alpha: float) -> float:
    """((eta - eta_min) / (eta_max - eta_min)) ** alpha, degenerate range -> 0."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if eta_max <= eta_min:
        return 0.0
    x = (eta - eta_min) / (eta_max - eta_min)
    return float(np.clip(x, 0.0, 1.0) ** alpha)


@dataclass
class DriftScore:
    user_id: int
    eta: float
    eta_hat: float


@dataclass
class DriftTable:
    """Per-user drift over the whole user registry (training-split based)."""

    eta: np.ndarray  # (U,)
    eta_hat: np.ndarray  # (U,)
    eta_min: float
    eta_max: float
    alpha: float

    def score(self, u: int) -> DriftScore:
        return DriftScore(u, float(self.eta[u]), float(self.eta_hat[u]))


def drift_table(histories, membership: GroupMembership, alpha: float) -> DriftTable:
    """Drift for every user; histories shorter than 2 items fall back to eta_min.

    eta_min/eta_max are taken over users with a measurable history; users
    without one get eta_min (no observed drift), hence eta_hat = 0.
    """
    n_users = len(histories)
    eta = np.full(n_users, np.nan)
    for u, h in enumerate(histories):
        if len(h) >= 2:
            d1, d2 = split_history_distributions(h, membership)
            eta[u] = symmetric_kl(d1, d2)
    measured = ~np.isnan(eta)
    if not measured.any():
        return DriftTable(np.zeros(n_users), np.zeros(n_users), 0.0, 0.0, alpha)
    eta_min = float(eta[measured].min())
    eta_max = float(eta[measured].max())
    eta[~measured] = eta_min
    eta_hat = np.array([normalize_drift(e, eta_min, eta_max, alpha) for e in eta])
    return DriftTable(eta, eta_hat, eta_min, eta_max, alpha)


def write_drift(path, table: DriftTable):
    """Export per-user (eta, eta_hat) as tab-separated text."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("user\teta\teta_hat\n")
        for u in range(table.eta.shape[0]):
            fh.write(f"{u}\t{table.eta[u]:.12g}\t{table.eta_hat[u]:.12g}\n")


def read_drift(path) -> tuple[np.ndarray, np.ndarray]:
    etas, eta_hats = [], []
    with open(path, "r", encoding="utf-8") as fh:
        next(fh)
        for line in fh:
            _, e, eh = line.split("\t")
            etas.append(float(e))
            eta_hats.append(float(eh))
    return np.asarray(etas), np.asarray(eta_hats)
