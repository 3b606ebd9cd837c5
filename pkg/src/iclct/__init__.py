"""In-context-learning enhanced credibility transformer for claim frequency modeling.

A numpy/scipy implementation of a tabular transformer whose CLS-token
representations are augmented at inference time by an outcome-decorated
context batch through causally masked cross-batch attention, together with
its three-phase training pipeline, exact cosine retrieval, zero-shot region
experiment and credibility-decomposition analysis tools.
"""

from .autodiff import Tape, Tensor, backward
from .config import ModelConfig, PhaseConfig, RunConfig
from .data import EncodedDataset, PolicyTable, TrainStats, VocabularyMap
from .decoder import NullModel, Prediction, icl_loss, poisson_deviance
from .icl import ContextTargetBatch, IclConfig, build_mask, credibility_weight
from .retrieval import EmbeddingIndex, assemble_context, build_index, knn
from .training import (
    ModelBundle,
    TrainingReport,
    ensemble_predict,
    evaluate,
    evaluate_null,
    phase1_train,
    phase2_train,
    phase3_finetune,
    predict,
)

__version__ = "0.1.0"

__all__ = [
    "Tape", "Tensor", "backward",
    "ModelConfig", "PhaseConfig", "RunConfig",
    "EncodedDataset", "PolicyTable", "TrainStats", "VocabularyMap",
    "NullModel", "Prediction", "icl_loss", "poisson_deviance",
    "ContextTargetBatch", "IclConfig", "build_mask", "credibility_weight",
    "EmbeddingIndex", "assemble_context", "build_index", "knn",
    "ModelBundle", "TrainingReport", "ensemble_predict", "evaluate",
    "evaluate_null", "phase1_train", "phase2_train", "phase3_finetune", "predict",
    "__version__",
]
