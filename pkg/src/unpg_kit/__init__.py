"""Pair-similarity losses on the unit hypersphere.

A library and CLI for the unified view of metric and classification
losses: pair generation from batches and class weights, margin-adjusted
similarity scoring, unified negative sets with whisker-based noise
filtering, exact analytic gradients, a deterministic desk-scale
trainer, and verification/identification metrics.
"""

from .errors import (
    CheckpointCorruptError,
    ConfigInvalidError,
    DimensionMismatchError,
    EmptyGalleryError,
    EmptyInputError,
    EmptyNegativesError,
    EmptyPositivesError,
    InsufficientDataError,
    InsufficientPairsError,
    LabelOutOfRangeError,
    NumericError,
    OriginMismatchError,
    RunIncompleteError,
    UnpgKitError,
    ZeroNormError,
)
from .loss import (
    BatchArtifacts,
    LossConfig,
    LossOutput,
    batch_forward,
    embedding_backward,
    loss_backward,
    unified_loss,
    unified_loss_unpg,
)
from .margins import (
    MarginConfig,
    ScoreSets,
    arcface_chain_factor,
    sc_arcface,
    sc_cosface,
    sc_snpair,
)
from .metrics import (
    MetricsReport,
    ScoredPairs,
    build_metrics_report,
    hard_negative_sample,
    overlap_count,
    pairwise_scores,
    rank1,
    tar_at_far,
    verification_accuracy,
    wdfs_gap,
)
from .pairs import (
    ClassWeightMatrix,
    FilterConfig,
    LabeledBatch,
    Pair,
    PairIndexSet,
    apply_retention_mask,
    clpg,
    filter_noise,
    mlpg,
    unpg_union,
)
from .sphere import angle, cos_sim, cos_sim_grad, normalize, normalize_rows
from .trainer import (
    OptimizerState,
    SyntheticSpec,
    TrainConfig,
    gen_synthetic,
    init_state,
    init_weights,
    load_checkpoint,
    lr_at,
    sample_batch,
    save_checkpoint,
    train_step,
)

__version__ = "0.1.0"
