"""Memorization auditing for image generative models.

Quantifies how much of a training set a generator has memorized: a small
convolutional encoder is trained to regress registered, brightness-normalized
SSIM between image pairs, so cosine similarity in its embedding space becomes
a cheap stand-in for the expensive aligned-SSIM ground truth. Audits, curated
evaluations, threshold fitting, and runtime benchmarks build on that encoder.
"""

__version__ = "0.1.0"

from .audit import (
    DEFAULT_ALPHA,
    DEFAULT_BETA,
    AuditReport,
    EmbeddingIndex,
    MatchRecord,
    SweepResult,
    Thresholds,
    build_index,
    classify,
    grid_search_thresholds,
    memorization_score,
    score_matrix,
    sensitivity_sweep,
)
from .autodiff import AdamW, Tape, Tensor
from .bench import BenchmarkResult, runtime_benchmark
from .encoder import (
    Checkpoint,
    Encoder,
    EncoderConfig,
    load_checkpoint,
    prepare_input,
    save_checkpoint,
)
from .errors import (
    ConfigMismatchError,
    FormatError,
    MemauditError,
    ShapeError,
    StateError,
    ValidationError,
)
from .evaluate import (
    ConfusionTable,
    HistogramExport,
    export_histograms,
    macro_f1,
    precision_recall_f1,
    silhouette,
)
from .images import (
    AugmentationSpec,
    Image,
    RigidTransform,
    apply_augmentation,
    apply_rigid,
    load_image,
    load_tensor,
    sample_augmentation,
    save_image,
    save_tensor,
)
from .manifest import (
    ManifestEntry,
    PairSsim,
    load_images,
    load_labels,
    load_manifest,
    save_labels,
    save_manifest,
)
from .metrics import (
    GROUND_TRUTH_SSIM,
    FsimConfig,
    SsimConfig,
    fsim,
    ssim,
    ssim_map,
)
from .phantoms import (
    ClassCounts,
    PairRecord,
    PhantomSpec,
    curate_test_set,
    generate_phantom,
    synthesize_corpus,
)
from .register import register_rigid, registered_ssim
from .training import TrainConfig, TrainResult, build_pair_set, train, validate_mae

__all__ = [
    "AdamW",
    "AugmentationSpec",
    "AuditReport",
    "BenchmarkResult",
    "Checkpoint",
    "ClassCounts",
    "ConfigMismatchError",
    "ConfusionTable",
    "DEFAULT_ALPHA",
    "DEFAULT_BETA",
    "EmbeddingIndex",
    "Encoder",
    "EncoderConfig",
    "FormatError",
    "FsimConfig",
    "GROUND_TRUTH_SSIM",
    "HistogramExport",
    "Image",
    "ManifestEntry",
    "MatchRecord",
    "MemauditError",
    "PairRecord",
    "PairSsim",
    "PhantomSpec",
    "RigidTransform",
    "ShapeError",
    "SsimConfig",
    "StateError",
    "SweepResult",
    "Tape",
    "Tensor",
    "Thresholds",
    "TrainConfig",
    "TrainResult",
    "ValidationError",
    "apply_augmentation",
    "apply_rigid",
    "build_index",
    "build_pair_set",
    "classify",
    "curate_test_set",
    "export_histograms",
    "fsim",
    "generate_phantom",
    "grid_search_thresholds",
    "load_checkpoint",
    "load_image",
    "load_images",
    "load_labels",
    "load_manifest",
    "load_tensor",
    "macro_f1",
    "memorization_score",
    "precision_recall_f1",
    "prepare_input",
    "register_rigid",
    "registered_ssim",
    "runtime_benchmark",
    "sample_augmentation",
    "save_checkpoint",
    "save_image",
    "save_labels",
    "save_manifest",
    "save_tensor",
    "score_matrix",
    "sensitivity_sweep",
    "silhouette",
    "ssim",
    "ssim_map",
    "synthesize_corpus",
    "train",
    "validate_mae",
]
