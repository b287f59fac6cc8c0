"""Mini-batch Adagrad training with per-epoch negative resampling and
early stopping on validation Recall@10.

``Model`` bundles backbone parameters, optimizer state, and (for the
deconfounded variant) the group-embedding head. Scoring of the full item
universe is decomposed into item-side and user-side partial sums so the
all-ranking protocol stays cheap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import fm
from .backdoor import BackdoorConfig, repr_backward_batch, repr_forward_batch
from .corpus import DatasetSplit, FeatureSchema, sample_negatives

LR_GRID = (0.005, 0.01, 0.05)
BATCH_GRID = (512, 1024, 2048)
L2_GRID = (0.0, 0.1, 0.2)
DROPOUT_GRID = (0.2, 0.3, 0.4, 0.5)
ALPHA_GRID = tuple(round(0.1 * i, 1) for i in range(1, 101))


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch_size: int = 1024
    l2: float = 0.0
    dropout: float = 0.3
    epochs: int = 100
    patience: int = 10
    neg_ratio: int = 1
    dim: int = 64
    seed: int = 0


@dataclass
class DeconfHead:
    """Trainable group embeddings plus the frozen backdoor configuration."""

    config: BackdoorConfig
    v: np.ndarray  # (N, H)
    G_v: np.ndarray  # Adagrad accumulator
    lr_scale: float = 1.0  # 0 freezes v (ablation hook)


class Model:
    """A trainable scorer: FM or NFM backbone, optionally deconfounded."""

    def __init__(self, kind: str, params: fm.FMParams, deconf: DeconfHead | None = None):
        if kind not in ("fm", "nfm"):
            raise ValueError(f"unknown backbone kind {kind!r}")
        self.kind = kind
        self.params = params
        self.deconf = deconf
        self.state = fm.AdagradState(params)
        self._gw_buf = np.zeros_like(params.w)
        self._gE_buf = np.zeros_like(params.E)

    # -- persistence of the learnable state (for best-epoch snapshots) ------

    def snapshot(self):
        dv = self.deconf.v.copy() if self.deconf else None
        return (self.params.copy(), dv)

    def restore(self, snap):
        params, dv = snap
        self.params = params.copy()
        self.state = fm.AdagradState(self.params)  # optimizer state not resumed
        if self.deconf is not None:
            self.deconf.v = dv.copy()
        self._gw_buf = np.zeros_like(self.params.w)
        self._gE_buf = np.zeros_like(self.params.E)

    # -- training ------------------------------------------------------------

    def _user_extra(self, user_ids, user_vals):
        """Group-level representation per instance, plus its chain-rule cache."""
        Zu = self.params.E[user_ids] * user_vals[..., None]
        user_sum = Zu.sum(axis=1)
        m, cache = repr_forward_batch(self.deconf.config, self.deconf.v, user_sum)
        return m, cache

    def train_batch(self, user_ids, user_vals, item_ids, item_vals, labels,
                    lr: float, l2: float, rng: np.random.Generator) -> float:
        """One forward/backward/Adagrad step; returns the mean log loss."""
        ids = np.concatenate([user_ids, item_ids], axis=1)
        vals = np.concatenate([user_vals, item_vals], axis=1)
        extra = None
        mcache = None
        if self.deconf is not None:
            extra, mcache = self._user_extra(user_ids, user_vals)
        cache = fm.forward_batch(self.params, ids, vals, extra, training=True, rng=rng)
        loss = float(fm.log_loss(cache.y, labels).mean())
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss}")
        b = labels.shape[0]
        dlogit = (cache.y - labels) / b
        bg = fm.backward_batch(self.params, cache, dlogit)

        gw_buf, gE_buf = self._gw_buf, self._gE_buf
        flat_ids = ids.ravel()
        np.add.at(gw_buf, flat_ids, bg.gw.ravel())
        np.add.at(gE_buf, flat_ids, bg.gE.reshape(-1, self.params.dim))
        if self.deconf is not None:
            dM = bg.gextra[:, 0]
            dv, d_user_sum = repr_backward_batch(self.deconf.config, mcache, dM)
            np.add.at(
                gE_buf, user_ids.ravel(),
                (d_user_sum[:, None, :] * user_vals[..., None]).reshape(-1, self.params.dim),
            )
            if self.deconf.lr_scale != 0.0:
                gv = dv + l2 * self.deconf.v
                fm.adagrad_inplace(self.deconf.v, self.deconf.G_v, gv,
                                   lr * self.deconf.lr_scale)

        rows = np.unique(flat_ids[vals.ravel() != 0.0])
        if l2 != 0.0:
            gE_buf[rows] += l2 * self.params.E[rows]
        st = self.state
        st.G_w0 += bg.w0 * bg.w0
        self.params.w0 -= lr * bg.w0 / (np.sqrt(st.G_w0) + fm.EPS_ADAGRAD)
        gw_rows = gw_buf[rows]
        st.G_w[rows] += gw_rows * gw_rows
        self.params.w[rows] -= lr * gw_rows / (np.sqrt(st.G_w[rows]) + fm.EPS_ADAGRAD)
        gE_rows = gE_buf[rows]
        st.G_E[rows] += gE_rows * gE_rows
        self.params.E[rows] -= lr * gE_rows / (np.sqrt(st.G_E[rows]) + fm.EPS_ADAGRAD)
        if bg.gW1 is not None:
            fm.adagrad_inplace(self.params.W1, st.G_W1, bg.gW1, lr)
            fm.adagrad_inplace(self.params.b1, st.G_b1, bg.gb1, lr)
            fm.adagrad_inplace(self.params.h, st.G_h, bg.gh, lr)
        gw_buf[rows] = 0.0
        gE_buf[rows] = 0.0
        return loss

    # -- all-item scoring ------------------------------------------------------

    def item_side(self, item_ids, item_vals):
        """Per-item partial sums over the whole universe (params frozen)."""
        Z = self.params.E[item_ids] * item_vals[..., None]
        S = Z.sum(axis=1)
        Q = (Z * Z).sum(axis=1)
        lin = (self.params.w[item_ids] * item_vals).sum(axis=1)
        return lin, S, Q

    def score_users(self, users, user_arr, item_arr, chunk: int = 0) -> np.ndarray:
        """Sigmoid scores for every (user, item) pair: (len(users), I)."""
        user_ids, user_vals = user_arr
        item_ids, item_vals = item_arr
        users = np.asarray(users, dtype=np.int64)
        u_ids = user_ids[users]
        u_vals = user_vals[users]
        Zu = self.params.E[u_ids] * u_vals[..., None]
        S_u = Zu.sum(axis=1)
        Q_u = (Zu * Zu).sum(axis=1)
        lin_u = self.params.w0 + (self.params.w[u_ids] * u_vals).sum(axis=1)
        if self.deconf is not None:
            m, _ = repr_forward_batch(self.deconf.config, self.deconf.v, S_u)
            S_u = S_u + m
            Q_u = Q_u + m * m
        lin_i, S_i, Q_i = self.item_side(item_ids, item_vals)

        if self.kind == "fm":
            pair_u = 0.5 * (S_u * S_u - Q_u).sum(axis=1)
            pair_i = 0.5 * (S_i * S_i - Q_i).sum(axis=1)
            logits = (lin_u + pair_u)[:, None] + (lin_i + pair_i)[None, :] + S_u @ S_i.T
            return fm.sigmoid(logits)

        n_items = item_ids.shape[0]
        dim = self.params.dim
        if chunk <= 0:
            chunk = max(1, 4_000_000 // max(1, n_items * dim))
        out = np.empty((users.shape[0], n_items))
        for lo in range(0, users.shape[0], chunk):
            hi = min(lo + chunk, users.shape[0])
            s = S_u[lo:hi, None, :] + S_i[None, :, :]
            pool = 0.5 * (s * s - (Q_u[lo:hi, None, :] + Q_i[None, :, :]))
            act = np.maximum(pool @ self.params.W1.T + self.params.b1, 0.0)
            out[lo:hi] = lin_u[lo:hi, None] + lin_i[None, :] + act @ self.params.h
        return fm.sigmoid(out)


def build_model(kind: str, schema: FeatureSchema, config: TrainConfig,
                backdoor: BackdoorConfig | None = None) -> Model:
    if kind == "fm":
        params = fm.init_fm(schema.n_features, config.dim, config.seed)
    else:
        params = fm.init_nfm(schema.n_features, config.dim, config.seed, config.dropout)
    deconf = None
    if backdoor is not None:
        n_groups = backdoor.dbar.shape[0]
        vrng = np.random.default_rng([config.seed, 1])
        v = vrng.normal(0.0, 0.01, size=(n_groups, config.dim))
        deconf = DeconfHead(backdoor, v, np.zeros_like(v))
    return Model(kind, params, deconf)


@dataclass
class TrainData:
    """Everything the trainer needs besides the model itself."""

    split: DatasetSplit
    schema: FeatureSchema
    user_arr: tuple
    item_arr: tuple
    val_users: np.ndarray
    val_relevant: list  # positive validation items per val_user


def validation_recall(model: Model, data: TrainData, k: int = 10) -> float:
    """Mean Recall@k over validation users, candidates = items minus train set."""
    if data.val_users.size == 0:
        return 0.0
    scores = model.score_users(data.val_users, data.user_arr, data.item_arr)
    n_items = data.item_arr[0].shape[0]
    item_range = np.arange(n_items)
    total = 0.0
    for row, u in enumerate(data.val_users):
        s = scores[row].copy()
        s[data.split.interacted[u]] = -np.inf
        order = np.lexsort((item_range, -s))
        top = order[:k]
        rel = data.val_relevant[row]
        total += np.isin(top, rel).sum() / rel.size
    return total / data.val_users.size


@dataclass
class TrainResult:
    model: Model
    log: list = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -np.inf


def train(model: Model, data: TrainData, config: TrainConfig) -> TrainResult:
    """Mini-batch Adagrad with per-epoch negative resampling.

    Stops when validation Recall@10 has not improved for ``patience``
    successive epochs, and restores the best-validation snapshot.
    """
    result = TrainResult(model)
    best_snap = model.snapshot()
    stale = 0
    user_ids, user_vals = data.user_arr
    item_ids, item_vals = data.item_arr
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        inst = sample_negatives(data.split, config.neg_ratio, config.seed + epoch)
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(len(inst))
        users, items, labels = inst.user[order], inst.item[order], inst.label[order]
        loss_sum = 0.0
        n_batches = 0
        for lo in range(0, len(inst), config.batch_size):
            hi = min(lo + config.batch_size, len(inst))
            ub, ib = users[lo:hi], items[lo:hi]
            try:
                loss = model.train_batch(
                    user_ids[ub], user_vals[ub], item_ids[ib], item_vals[ib],
                    labels[lo:hi], config.lr, config.l2, rng,
                )
            except TrainingDivergedError as exc:
                raise TrainingDivergedError(
                    f"epoch {epoch}, batch {n_batches}: {exc}"
                ) from None
            loss_sum += loss
            n_batches += 1
        mean_loss = loss_sum / max(1, n_batches)
        r10 = validation_recall(model, data, k=10)
        improved = r10 > result.best_metric
        if improved:
            result.best_metric = r10
            result.best_epoch = epoch
            best_snap = model.snapshot()
            stale = 0
        else:
            stale += 1
        result.log.append({
            "epoch": epoch,
            "loss": mean_loss,
            "val_recall10": r10,
            "best": improved,
            "seconds": time.perf_counter() - t0,
        })
        if stale >= config.patience:
            break
    model.restore(best_snap)
    return result


def write_training_log(path, log):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\tloss\tval_recall10\tbest\tseconds\n")
        for row in log:
            fh.write(
                f"{row['epoch']}\t{row['loss']:.12g}\t{row['val_recall10']:.12g}"
                f"\t{int(row['best'])}\t{row['seconds']:.3f}\n"
            )
