"""Deconfounded factorization-machine recommenders.

Backbone FM/NFM scorers trained on implicit feedback, a backdoor-adjustment
head that marginalizes the user's historical item-group distribution, a
drift-aware fusion strategy at inference time, and an evaluation harness
covering ranking accuracy and bias amplification.
"""

from .backdoor import BackdoorConfig, decrs_score, group_repr_ep, group_repr_fm
from .confounder import (
    confounder_prior,
    drift_table,
    normalize_drift,
    split_history_distributions,
    symmetric_kl,
    user_group_distribution,
)
from .corpus import (
    FeatureSchema,
    GroupMembership,
    InteractionSet,
    apply_k_core,
    binarize,
    chronological_split,
    drop_group_features,
    group_membership,
    load_interactions,
    sample_negatives,
)
from .evalx import c_kl, calibration_rerank, drift_bucket_report, ndcg_at_k, recall_at_k
from .fm import (
    AdagradState,
    FMParams,
    Gradients,
    NFMParams,
    SparseInstance,
    adagrad_step,
    backward,
    fm_score,
    init_fm,
    init_nfm,
    log_loss,
    nfm_score,
)
from .inference import RankedList, fuse_scores, rank_single, rank_topk
from .synthetic import SyntheticConfig, synthesize_dataset
from .training import Model, TrainConfig, build_model, train

__version__ = "0.1.0"
