"""Self-supervised multimodal representation learning for human activity
recognition from paired inertial and skeleton sequences."""

__version__ = "0.1.0"

from .contrastive import (
    GuidanceSimilarity,
    MiningSets,
    ProjectionBatch,
    cmc_loss,
    cmkm_loss,
    cosine_similarity_matrix,
    guidance_from_encoders,
    mine_sets,
    nt_xent,
)
from .data import (
    InertialSequence,
    MultimodalSample,
    SkeletonSequence,
    SplitSpec,
    generate_synthetic,
    load_dataset,
    make_split,
    normalize_skeleton,
    preprocess_samples,
    resample_sequence,
    subsample_labels,
)
from .train import (
    OptimizerSchedule,
    PretrainPlan,
    pretrain_multimodal,
    pretrain_unimodal,
    step_scheduler,
    train_supervised,
)

__all__ = [
    "GuidanceSimilarity",
    "MiningSets",
    "ProjectionBatch",
    "cmc_loss",
    "cmkm_loss",
    "cosine_similarity_matrix",
    "guidance_from_encoders",
    "mine_sets",
    "nt_xent",
    "InertialSequence",
    "MultimodalSample",
    "SkeletonSequence",
    "SplitSpec",
    "generate_synthetic",
    "load_dataset",
    "make_split",
    "normalize_skeleton",
    "preprocess_samples",
    "resample_sequence",
    "subsample_labels",
    "OptimizerSchedule",
    "PretrainPlan",
    "pretrain_multimodal",
    "pretrain_unimodal",
    "step_scheduler",
    "train_supervised",
]
