"""Forensic similarity toolkit.

Decides whether two image patches carry the same forensic trace (capture
pipeline or editing operation) using a learned patch comparator, and builds
two applications on that decision: forgery detection/localization and
image-database consistency verification.
"""

from .apps import (
    DatabaseVerdict,
    LocalizationMap,
    detect_forgery,
    forgery_score,
    localize,
    mean_similarity,
    verify_database,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    CheckpointChecksumError,
    CheckpointError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigurationError,
    DimensionError,
    ForensimError,
    UndefinedMetricError,
    UnreliableImageError,
    UnreliablePatchError,
    UnreliableReferenceError,
)
from .extractor import (
    ConvBlockSpec,
    DeepFeature,
    ExtractorConfig,
    ExtractorModel,
    PhaseAHyper,
    desk_config,
    extract,
    gradients,
    paper_config,
    train_phase_a,
)
from .patches import (
    EntropyThresholds,
    Patch,
    center_crop,
    crop_top_left,
    entropy,
    grid_shape,
    luminance,
    passes_filter,
    tile,
)
from .similarity import (
    ComparisonResult,
    PairDataset,
    PhaseBHyper,
    SimilarityConfig,
    SimilarityModel,
    SimilaritySystem,
    compare,
    similarity,
    train_phase_b,
)

__version__ = "0.1.0"

__all__ = [
    "CheckpointChecksumError",
    "CheckpointError",
    "CheckpointShapeError",
    "CheckpointTruncatedError",
    "CheckpointVersionError",
    "ComparisonResult",
    "ConfigurationError",
    "ConvBlockSpec",
    "DatabaseVerdict",
    "DeepFeature",
    "DimensionError",
    "EntropyThresholds",
    "ExtractorConfig",
    "ExtractorModel",
    "ForensimError",
    "LocalizationMap",
    "Patch",
    "PairDataset",
    "PhaseAHyper",
    "PhaseBHyper",
    "SimilarityConfig",
    "SimilarityModel",
    "SimilaritySystem",
    "UndefinedMetricError",
    "UnreliableImageError",
    "UnreliablePatchError",
    "UnreliableReferenceError",
    "center_crop",
    "compare",
    "crop_top_left",
    "desk_config",
    "detect_forgery",
    "entropy",
    "extract",
    "forgery_score",
    "gradients",
    "grid_shape",
    "load_checkpoint",
    "localize",
    "luminance",
    "mean_similarity",
    "paper_config",
    "passes_filter",
    "save_checkpoint",
    "similarity",
    "tile",
    "train_phase_a",
    "train_phase_b",
    "verify_database",
]
