"""protostream: hash-free streaming category discovery.

Offline margin-calibrated representation learning over fixed embeddings,
prototype-memory inference with novelty creation, confidence-controlled
prototype refinement, and stable test-time encoder adaptation, plus dual
Hungarian evaluation protocols and a sign-hash baseline.
"""

from .core import cosine, normalize, softmax_temp
from .data import EmbeddingDataset, SynthConfig, generate_synthetic, order_stream, read_dataset, write_dataset
from .evaluation import EvalReport, greedy_accuracy, hash_baseline, hungarian, strict_accuracy
from .memory import (
    PrototypeMemory,
    UpdateParams,
    confidence,
    init_from_labeled,
    nearest,
    step_size,
    update_prototypes,
)
from .offline import (
    AdapterState,
    LabeledBatch,
    OfflineConfig,
    angle_stats,
    margin_ce_loss,
    margin_logits,
    plain_ce_loss,
    supcon_loss,
    train_offline,
)
from .online import BatchOutcome, DecisionConfig, Prediction, StreamEngine, TtaConfig, decide, tta_loss

__version__ = "0.1.0"

__all__ = [
    "AdapterState",
    "BatchOutcome",
    "DecisionConfig",
    "EmbeddingDataset",
    "EvalReport",
    "LabeledBatch",
    "OfflineConfig",
    "Prediction",
    "PrototypeMemory",
    "StreamEngine",
    "SynthConfig",
    "TtaConfig",
    "UpdateParams",
    "angle_stats",
    "confidence",
    "cosine",
    "decide",
    "generate_synthetic",
    "greedy_accuracy",
    "hash_baseline",
    "hungarian",
    "init_from_labeled",
    "margin_ce_loss",
    "margin_logits",
    "nearest",
    "normalize",
    "order_stream",
    "plain_ce_loss",
    "read_dataset",
    "softmax_temp",
    "step_size",
    "strict_accuracy",
    "supcon_loss",
    "train_offline",
    "tta_loss",
    "update_prototypes",
    "write_dataset",
]
