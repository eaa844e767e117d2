"""Transfer training toolkit for generated-image detectors.

Small convolutional detector with group normalization and weight
standardization, an anchored teacher-student transfer loop whose
regularization strength follows the teacher's confidence, a label-safe
Cutmix pipeline with JPEG and blur noise, synthetic two-domain data, and
AUROC-based before/after evaluation.
"""

from .augment import (
    AugmentationConfig,
    CutBox,
    apply_pipeline,
    gaussian_blur,
    horizontal_flip,
    intra_class_cutmix,
    inter_class_cutmix,
    jpeg_round_trip,
    sample_cut_box,
)
from .checkpoint import load_checkpoint, read_manifest, save_checkpoint
from .data import (
    Dataset,
    DatasetManifest,
    SyntheticSpec,
    generate_synthetic,
    load_dataset,
    load_image_folder,
    save_dataset,
    split_dataset,
    subset,
)
from .errors import (
    AlignmentError,
    CheckpointError,
    ConfigError,
    DigestMismatchError,
    DivergenceError,
    GanTransferError,
    ManifestError,
    MetricUndefinedError,
    TensorShapeError,
)
from .evaluate import (
    EvalReport,
    auroc,
    evaluate_checkpoint,
    forgetting_report,
    numeric_gradient,
)
from .kernels import get_backend, set_backend
from .losses import (
    binary_cross_entropy,
    l2_norm_squared,
    legacy_transfer_loss,
    pretrain_loss,
    sp_penalty,
    transfer_loss,
)
from .model import (
    ModelSpec,
    forward,
    group_normalize,
    init_params,
    partition_params,
    weight_standardize,
)
from .params import LabeledBatch, ParameterSet, RegularizerWeights
from .selftrain import (
    PretrainConfig,
    SelfTrainState,
    TransferConfig,
    compute_gamma,
    feedback_sync,
    run_pretrain,
    run_transfer,
    teacher_evaluate,
    transfer_step,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentError",
    "AugmentationConfig",
    "CheckpointError",
    "ConfigError",
    "CutBox",
    "Dataset",
    "DatasetManifest",
    "DigestMismatchError",
    "DivergenceError",
    "EvalReport",
    "GanTransferError",
    "LabeledBatch",
    "ManifestError",
    "MetricUndefinedError",
    "ModelSpec",
    "ParameterSet",
    "PretrainConfig",
    "RegularizerWeights",
    "SelfTrainState",
    "SyntheticSpec",
    "TensorShapeError",
    "TransferConfig",
    "apply_pipeline",
    "auroc",
    "binary_cross_entropy",
    "compute_gamma",
    "evaluate_checkpoint",
    "feedback_sync",
    "forgetting_report",
    "forward",
    "gaussian_blur",
    "generate_synthetic",
    "get_backend",
    "group_normalize",
    "horizontal_flip",
    "init_params",
    "inter_class_cutmix",
    "intra_class_cutmix",
    "jpeg_round_trip",
    "l2_norm_squared",
    "legacy_transfer_loss",
    "load_checkpoint",
    "load_dataset",
    "load_image_folder",
    "numeric_gradient",
    "partition_params",
    "pretrain_loss",
    "read_manifest",
    "run_pretrain",
    "run_transfer",
    "sample_cut_box",
    "save_checkpoint",
    "save_dataset",
    "set_backend",
    "sp_penalty",
    "split_dataset",
    "subset",
    "teacher_evaluate",
    "transfer_loss",
    "transfer_step",
    "weight_standardize",
]
