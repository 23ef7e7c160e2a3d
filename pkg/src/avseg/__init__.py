"""Unsupervised audio-visual segmentation on exported feature tensors.

The pipeline: frozen image/audio trunks with small trainable
cross-attention adapters, a triplet matching loss over per-token
audio-similarity maps, cosine k-means for mask inference, and optional
refinement against external mask proposals. Scenes come either from the
bundled synthetic generator or from tensor files written by any
exporter that follows the container format in :mod:`avseg.storage`.
"""

from .errors import (
    ConfigError,
    ContractError,
    DomainError,
    FormatError,
    PipelineError,
    ShapeError,
    TrainingError,
)
from .inference import (
    InferenceConfig,
    Proposal,
    kmeans_cosine,
    mpm,
    nms_masks,
    rank_proposals_bind,
    sounding_mask,
)
from .metrics import EvalReport, evaluate, f_score, iou
from .model import (
    AdapterParams,
    FrozenTrunk,
    Placement,
    TrunkConfig,
    adaav_forward,
    audio_forward,
    enhanced_map,
    fused_forward,
    visual_forward,
)
from .objective import ObjectiveConfig, combined_cost, cost_ncc, cost_ssd, triplet_loss
from .pairing import PairTable, build_knn_table, sample_triplet
from .storage import load_manifest, load_tensor, save_tensor, write_manifest
from .synthetic import Scene, SceneConfig, gen_dataset, gen_proposals, gen_scene
from .trainer import OptimState, TrainConfig, TrainResult, adam_step, cosine_lr, train

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "ConfigError",
    "ContractError",
    "DomainError",
    "EvalReport",
    "FormatError",
    "FrozenTrunk",
    "InferenceConfig",
    "ObjectiveConfig",
    "OptimState",
    "PairTable",
    "PipelineError",
    "Placement",
    "Proposal",
    "Scene",
    "SceneConfig",
    "ShapeError",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "TrunkConfig",
    "adaav_forward",
    "adam_step",
    "audio_forward",
    "build_knn_table",
    "combined_cost",
    "cosine_lr",
    "cost_ncc",
    "cost_ssd",
    "enhanced_map",
    "evaluate",
    "f_score",
    "fused_forward",
    "gen_dataset",
    "gen_proposals",
    "gen_scene",
    "iou",
    "kmeans_cosine",
    "load_manifest",
    "load_tensor",
    "mpm",
    "nms_masks",
    "rank_proposals_bind",
    "sample_triplet",
    "save_tensor",
    "sounding_mask",
    "train",
    "triplet_loss",
    "visual_forward",
    "write_manifest",
]
