"""Factorization-machine and neural-FM scorers with hand-derived gradients.

Everything here is plain numpy, float64, and deterministic. The batched
functions are the single implementation of the math; the per-instance
helpers (``fm_score``, ``nfm_score``, ``backward``) wrap a batch of one.
Extra dense vectors (group-level user representations supplied by callers)
enter the pairwise interactions only and carry no linear weight.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_ADAGRAD = 1e-8
CLAMP = 1e-7


@dataclass
class FMParams:
    """Global bias, per-feature linear weights, per-feature embeddings."""

    w0: float
    w: np.ndarray  # (F,)
    E: np.ndarray  # (F, H)

    @property
    def n_features(self) -> int:
        return self.w.shape[0]

    @property
    def dim(self) -> int:
        return self.E.shape[1]

    def copy(self) -> "FMParams":
        return FMParams(self.w0, self.w.copy(), self.E.copy())


@dataclass
class NFMParams(FMParams):
    """FM parameters plus one rectified hidden layer over the pooled vector."""

    W1: np.ndarray = None  # (H, H)
    b1: np.ndarray = None  # (H,)
    h: np.ndarray = None  # (H,)
    dropout: float = 0.0

    def copy(self) -> "NFMParams":
        return NFMParams(
            self.w0, self.w.copy(), self.E.copy(),
            self.W1.copy(), self.b1.copy(), self.h.copy(), self.dropout,
        )


def init_fm(n_features: int, dim: int, seed: int) -> FMParams:
    """Zero-mean Gaussian embeddings (std 0.01), zero linear part."""
    rng = np.random.default_rng(seed)
    E = rng.normal(0.0, 0.01, size=(n_features, dim))
    return FMParams(0.0, np.zeros(n_features), E)


def init_nfm(n_features: int, dim: int, seed: int, dropout: float = 0.0) -> NFMParams:
    rng = np.random.default_rng(seed)
    E = rng.normal(0.0, 0.01, size=(n_features, dim))
    # Glorot-uniform hidden layer so the rectified path has gradient at init.
    lim1 = np.sqrt(6.0 / (dim + dim))
    W1 = rng.uniform(-lim1, lim1, size=(dim, dim))
    limh = np.sqrt(6.0 / (dim + 1))
    h = rng.uniform(-limh, limh, size=dim)
    return NFMParams(0.0, np.zeros(n_features), E, W1, np.zeros(dim), h, dropout)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def log_loss(y, label):
    """Binary cross entropy with the score clamped into [1e-7, 1 - 1e-7]."""
    y = np.clip(y, CLAMP, 1.0 - CLAMP)
    return -(label * np.log(y) + (1.0 - label) * np.log(1.0 - y))


# ---------------------------------------------------------------------------
# Batched core.
#
# A batch is (ids, vals) of shape (B, A): active feature ids and values,
# zero-padded (value 0 contributes nothing to any term). ``extra`` holds
# optional dense interaction vectors, (B, H) for one per instance or
# (B, X, H) for several; they join the pairwise sum as additional rows.
# ---------------------------------------------------------------------------


def _extra_rows(extra: np.ndarray | None) -> np.ndarray | None:
    if extra is None:
        return None
    extra = np.asarray(extra, dtype=np.float64)
    if extra.ndim == 2:
        return extra[:, None, :]
    return extra


@dataclass
class ForwardCache:
    ids: np.ndarray
    vals: np.ndarray
    n_extra: int
    Z: np.ndarray  # (B, A + X, H) value-scaled embeddings plus extra rows
    S: np.ndarray  # (B, H) row sum
    y: np.ndarray  # (B,) sigmoid scores
    # NFM-only intermediates
    pool_d: np.ndarray | None = None  # post-dropout pooled vector
    mask: np.ndarray | None = None  # inverted-dropout mask (scale included)
    a_pre: np.ndarray | None = None
    act: np.ndarray | None = None


@dataclass
class BatchGrads:
    w0: float
    gw: np.ndarray  # (B, A) per-slot linear gradients
    gE: np.ndarray  # (B, A, H) per-slot embedding gradients
    gextra: np.ndarray | None  # (B, X, H) gradients w.r.t. extra vectors
    gW1: np.ndarray | None = None
    gb1: np.ndarray | None = None
    gh: np.ndarray | None = None


def forward_batch(
    params: FMParams,
    ids: np.ndarray,
    vals: np.ndarray,
    extra: np.ndarray | None = None,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardCache:
    """Score a batch; pairwise terms use the square-of-sum identity."""
    ex = _extra_rows(extra)
    if ex is not None and ex.shape[-1] != params.dim:
        raise ValueError(
            f"extra vector dimension {ex.shape[-1]} != embedding dim {params.dim}"
        )
    Z = params.E[ids] * vals[..., None]
    if ex is not None:
        Z = np.concatenate([Z, ex], axis=1)
    S = Z.sum(axis=1)
    Q = (Z * Z).sum(axis=1)
    lin = params.w0 + (params.w[ids] * vals).sum(axis=1)
    n_extra = 0 if ex is None else ex.shape[1]

    if isinstance(params, NFMParams):
        pool = 0.5 * (S * S - Q)  # (B, H)
        mask = None
        pool_d = pool
        if training and params.dropout > 0.0:
            keep = 1.0 - params.dropout
            mask = (rng.random(pool.shape) < keep) / keep
            pool_d = pool * mask
        a_pre = pool_d @ params.W1.T + params.b1
        act = np.maximum(a_pre, 0.0)
        y = sigmoid(lin + act @ params.h)
        return ForwardCache(ids, vals, n_extra, Z, S, y, pool_d, mask, a_pre, act)

    pair = 0.5 * (S * S - Q).sum(axis=1)
    y = sigmoid(lin + pair)
    return ForwardCache(ids, vals, n_extra, Z, S, y)


def backward_batch(params: FMParams, cache: ForwardCache, dlogit: np.ndarray) -> BatchGrads:
    """Gradients of the logit w.r.t. every touched parameter, scaled by dlogit.

    For log loss on sigmoid scores the caller passes dlogit = y - label
    (optionally averaged over the batch).
    """
    ids, vals, Z, S = cache.ids, cache.vals, cache.Z, cache.S
    a_feat = ids.shape[1]
    gw0 = float(dlogit.sum())
    gw = dlogit[:, None] * vals

    if isinstance(params, NFMParams):
        gh = cache.act.T @ dlogit
        da_pre = (dlogit[:, None] * params.h) * (cache.a_pre > 0.0)
        gW1 = da_pre.T @ cache.pool_d
        gb1 = da_pre.sum(axis=0)
        dpool = da_pre @ params.W1
        if cache.mask is not None:
            dpool = dpool * cache.mask
        dz = dpool[:, None, :] * (S[:, None, :] - Z)
        gE = dz[:, :a_feat] * vals[..., None]
        gextra = dz[:, a_feat:] if cache.n_extra else None
        return BatchGrads(gw0, gw, gE, gextra, gW1, gb1, gh)

    dz = dlogit[:, None, None] * (S[:, None, :] - Z)
    gE = dz[:, :a_feat] * vals[..., None]
    gextra = dz[:, a_feat:] if cache.n_extra else None
    return BatchGrads(gw0, gw, gE, gextra)


# ---------------------------------------------------------------------------
# Per-instance API.
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseInstance:
    """One training/scoring example: sparse user and item parts, dense extras."""

    user_features: tuple
    item_features: tuple
    extras: tuple = ()

    @property
    def features(self):
        return tuple(self.user_features) + tuple(self.item_features)


def _instance_batch(instance: SparseInstance, dim: int):
    feats = instance.features
    if not feats:
        raise ValueError("instance has no active features")
    fids = [f for f, _ in feats]
    if len(set(fids)) != len(fids):
        raise ValueError("duplicate feature ids within an instance")
    ids = np.array([fids], dtype=np.int64)
    vals = np.array([[x for _, x in feats]], dtype=np.float64)
    extra = None
    if instance.extras:
        for e in instance.extras:
            if np.asarray(e).shape != (dim,):
                raise ValueError("extra vector has wrong dimension")
        extra = np.stack([np.asarray(e, dtype=np.float64) for e in instance.extras])[None]
    return ids, vals, extra


def fm_score(params: FMParams, instance: SparseInstance) -> float:
    """Sigmoid FM score: bias + linear + all pairwise interactions."""
    ids, vals, extra = _instance_batch(instance, params.dim)
    return float(forward_batch(params, ids, vals, extra).y[0])


def nfm_score(
    params: NFMParams,
    instance: SparseInstance,
    *,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> float:
    """Sigmoid NFM score: bi-interaction pooling into one rectified layer."""
    ids, vals, extra = _instance_batch(instance, params.dim)
    return float(forward_batch(params, ids, vals, extra, training=training, rng=rng).y[0])


@dataclass
class Gradients:
    """Sparse gradient container keyed by feature id; extras returned densely."""

    w0: float
    w: dict
    E: dict
    extras: list = field(default_factory=list)
    W1: np.ndarray | None = None
    b1: np.ndarray | None = None
    h: np.ndarray | None = None


def backward(params: FMParams, instance: SparseInstance, label: float) -> Gradients:
    """Exact gradients of log_loss(score, label) for one instance."""
    ids, vals, extra = _instance_batch(instance, params.dim)
    cache = forward_batch(params, ids, vals, extra)
    dlogit = cache.y - np.array([label], dtype=np.float64)
    bg = backward_batch(params, cache, dlogit)
    gw = {}
    gE = {}
    for j, (fid, _x) in enumerate(instance.features):
        gw[fid] = float(bg.gw[0, j])
        gE[fid] = bg.gE[0, j].copy()
    extras = [bg.gextra[0, x].copy() for x in range(len(instance.extras))]
    return Gradients(bg.w0, gw, gE, extras, bg.gW1, bg.gb1, bg.gh)


# ---------------------------------------------------------------------------
# Adagrad.
# ---------------------------------------------------------------------------


def adagrad_inplace(param: np.ndarray, accum: np.ndarray, grad: np.ndarray, lr: float):
    """G += g^2; param -= lr * g / (sqrt(G) + 1e-8). Mutates both arrays."""
    accum += grad * grad
    param -= lr * grad / (np.sqrt(accum) + EPS_ADAGRAD)


@dataclass
class AdagradState:
    """Accumulators mirroring an FMParams/NFMParams instance."""

    params: FMParams
    G_w0: float = 0.0
    G_w: np.ndarray = None
    G_E: np.ndarray = None
    G_W1: np.ndarray = None
    G_b1: np.ndarray = None
    G_h: np.ndarray = None

    def __post_init__(self):
        p = self.params
        if self.G_w is None:
            self.G_w = np.zeros_like(p.w)
        if self.G_E is None:
            self.G_E = np.zeros_like(p.E)
        if isinstance(p, NFMParams) and self.G_W1 is None:
            self.G_W1 = np.zeros_like(p.W1)
            self.G_b1 = np.zeros_like(p.b1)
            self.G_h = np.zeros_like(p.h)


def adagrad_step(state: AdagradState, grads: Gradients, lr: float) -> FMParams:
    """Apply one sparse Adagrad update; rows without gradients stay untouched."""
    p = state.params
    state.G_w0 += grads.w0 * grads.w0
    p.w0 -= lr * grads.w0 / (np.sqrt(state.G_w0) + EPS_ADAGRAD)
    for fid, g in grads.w.items():
        state.G_w[fid] += g * g
        p.w[fid] -= lr * g / (np.sqrt(state.G_w[fid]) + EPS_ADAGRAD)
    for fid, g in grads.E.items():
        adagrad_inplace(p.E[fid], state.G_E[fid], g, lr)
    if grads.W1 is not None:
        adagrad_inplace(p.W1, state.G_W1, grads.W1, lr)
        adagrad_inplace(p.b1, state.G_b1, grads.b1, lr)
        adagrad_inplace(p.h, state.G_h, grads.h, lr)
    return p
