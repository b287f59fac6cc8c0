"""Backdoor-adjustment operator: group embeddings and the adjusted scorer.

The group-level user representation M is built from the global expected
group distribution (frozen at training start), the group embedding table v,
and the user-part feature embeddings. Two operator forms are provided:

* ``element-product``: weighted group sum element-wise-multiplied with the
  weighted user-feature sum (the factored form of the full double sum).
* ``fm-module``: element-wise square of the weighted sum over the
  concatenated (distribution, user-values) x (group, user) embeddings,
  i.e. the literal double sum including self-pairs and both orders.

M is handed to the backbone as an extra interaction vector; it carries no
linear weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fm import FMParams, SparseInstance, forward_batch

OPERATORS = ("element-product", "fm-module")


@dataclass
class BackdoorConfig:
    """Operator choice plus the frozen expected group distribution."""

    operator: str
    dbar: np.ndarray  # (N,)

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}; use one of {OPERATORS}")
        d = np.asarray(self.dbar, dtype=np.float64)
        if d.ndim != 1 or (d < -1e-12).any() or abs(d.sum() - 1.0) > 1e-9:
            raise ValueError("dbar must be a distribution over item groups")
        self.dbar = d


def _user_sum(user_features, E: np.ndarray) -> np.ndarray:
    return sum((x * E[f] for f, x in user_features), np.zeros(E.shape[1]))


def group_repr_ep(dbar, user_features, E: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Element-product form: (sum_a p_a v_a) * (sum_b x_b u_b)."""
    if not user_features:
        raise ValueError("user part is empty")
    if v.shape[1] != E.shape[1]:
        raise ValueError("group embedding dimension mismatch")
    vw = np.asarray(dbar, dtype=np.float64) @ v
    return vw * _user_sum(user_features, E)


def group_repr_fm(
    dbar, user_features, E: np.ndarray, v: np.ndarray, *, include_self: bool = True
) -> np.ndarray:
    """Second-order module form: s * s with s = sum_a w_a c_a over the
    concatenated (distribution weights, user values) and (v, u) vectors.

    ``include_self=True`` keeps the full double sum (self-pairs, both
    orders); False switches to the conventional half sum without
    self-interactions, for comparison.
    """
    if not user_features:
        raise ValueError("user part is empty")
    if v.shape[1] != E.shape[1]:
        raise ValueError("group embedding dimension mismatch")
    vw = np.asarray(dbar, dtype=np.float64) @ v
    s = vw + _user_sum(user_features, E)
    if include_self:
        return s * s
    sq = (np.asarray(dbar, dtype=np.float64) ** 2) @ (v * v)
    sq = sq + sum((x * x * E[f] * E[f] for f, x in user_features), np.zeros(E.shape[1]))
    return 0.5 * (s * s - sq)


def group_repr(config: BackdoorConfig, user_features, E, v) -> np.ndarray:
    if config.operator == "element-product":
        return group_repr_ep(config.dbar, user_features, E, v)
    return group_repr_fm(config.dbar, user_features, E, v)


def decrs_score(
    params: FMParams, v: np.ndarray, instance: SparseInstance, config: BackdoorConfig
) -> float:
    """Backbone score with the group-level representation appended."""
    m = group_repr(config, instance.user_features, params.E, v)
    ids_vals = instance.features
    ids = np.array([[f for f, _ in ids_vals]], dtype=np.int64)
    vals = np.array([[x for _, x in ids_vals]], dtype=np.float64)
    extras = list(instance.extras) + [m]
    extra = np.stack([np.asarray(e, dtype=np.float64) for e in extras])[None]
    return float(forward_batch(params, ids, vals, extra).y[0])


# ---------------------------------------------------------------------------
# Batched forward/backward for training: M per instance from the user-part
# embedding sum, with the chain rule back into v and the user embeddings.
# ---------------------------------------------------------------------------


def repr_forward_batch(config: BackdoorConfig, v: np.ndarray, user_sum: np.ndarray):
    """M for a batch given the per-instance user-part embedding sums (B, H).

    Returns (M, cache) where cache feeds ``repr_backward_batch``.
    """
    vw = config.dbar @ v  # (H,)
    if config.operator == "element-product":
        return vw * user_sum, (vw, user_sum, None)
    s = vw + user_sum
    return s * s, (vw, user_sum, s)


def repr_backward_batch(config: BackdoorConfig, cache, dM: np.ndarray):
    """Chain dL/dM back to (dL/dv, dL/d user_sum)."""
    vw, user_sum, s = cache
    if config.operator == "element-product":
        d_user_sum = dM * vw
        d_vw = (dM * user_sum).sum(axis=0)
    else:
        ds = 2.0 * dM * s
        d_user_sum = ds
        d_vw = ds.sum(axis=0)
    dv = np.outer(config.dbar, d_vw)  # (N, H)
    return dv, d_user_sum
