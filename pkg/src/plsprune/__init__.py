"""Structured pruning of small CNNs with PLS + VIP filter importance."""

from .criteria import Criterion, FilterScore, apoz_scores, l1_norm_scores, pls_vip_scores
from .data import Dataset, load_csv, load_idx, split, subsample, synthetic
from .network import (
    Network,
    TrainConfig,
    build_cnn,
    evaluate,
    flops_count,
    load,
    save,
    train_sgd,
)
from .pipeline import (
    PruneConfig,
    PruningReport,
    compare_criteria,
    compare_iterative_single,
    run_iterative,
    run_single_shot,
)
from .pls import PlsModel, nipals_fit, transform, vip
from .representation import FeatureMapIndex, FilterKey, PoolingMode, build_feature_matrix
from .surgery import RemovalPlan, prune_network, select_filters, validate_consistency

__version__ = "0.1.0"
