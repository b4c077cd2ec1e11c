"""Contrastive-regression losses and a quality-score training/evaluation harness."""

from .autodiff import Parameter, Tensor, finite_diff_check, matmul, pairwise_dist, relu
from .data import (
    FAMILIES,
    LabeledSample,
    ManifestError,
    SyntheticSpec,
    generate_corpus,
    load_manifest,
    split_by_family,
    write_corpus,
)
from .estimators import QualityRegressor, TripletEmbedder
from .losses import (
    BatchTooSmallError,
    LossOutput,
    MarginSpec,
    TripletMask,
    adaptive_grad_condition,
    batch_all_triplet_adaptive,
    batch_all_triplet_fixed,
    build_mask,
    classification_triplet_loss,
    label_distance,
    offline_hard_triplets,
)
from .metrics import (
    BootstrapReport,
    DiagnosticsReport,
    MetricsReport,
    bootstrap_compare,
    diagnose_embeddings,
    kmeans,
    nmi,
    pca2,
    pearson,
    rmse_mapped,
    spearman,
)
from .model import EncoderConfig, QualityModel, ReferenceSet, nmr_score, nmr_scores
from .training import (
    Adam,
    EarlyStopState,
    TrainConfig,
    TrainingError,
    grid_search_l2,
    train_l2_baseline,
    train_nr_head,
    train_offline,
    train_triplet_encoder,
    trim_frames,
)

__version__ = "0.1.0"

__all__ = [
    "Adam",
    "BatchTooSmallError",
    "BootstrapReport",
    "DiagnosticsReport",
    "EarlyStopState",
    "EncoderConfig",
    "FAMILIES",
    "LabeledSample",
    "LossOutput",
    "ManifestError",
    "MarginSpec",
    "MetricsReport",
    "Parameter",
    "QualityModel",
    "QualityRegressor",
    "ReferenceSet",
    "SyntheticSpec",
    "Tensor",
    "TrainConfig",
    "TrainingError",
    "TripletEmbedder",
    "TripletMask",
    "adaptive_grad_condition",
    "batch_all_triplet_adaptive",
    "batch_all_triplet_fixed",
    "bootstrap_compare",
    "build_mask",
    "classification_triplet_loss",
    "diagnose_embeddings",
    "finite_diff_check",
    "generate_corpus",
    "grid_search_l2",
    "kmeans",
    "label_distance",
    "load_manifest",
    "matmul",
    "nmi",
    "nmr_score",
    "nmr_scores",
    "offline_hard_triplets",
    "pairwise_dist",
    "pca2",
    "pearson",
    "relu",
    "rmse_mapped",
    "spearman",
    "split_by_family",
    "train_l2_baseline",
    "train_nr_head",
    "train_offline",
    "train_triplet_encoder",
    "trim_frames",
    "write_corpus",
]
