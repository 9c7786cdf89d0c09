"""Joint video moment retrieval and highlight detection, desk scale.

Given per-clip video features and per-word query features, the model
predicts a set of candidate moment spans with foreground probabilities and
a per-clip saliency score, trained with Hungarian-matched span losses and
saliency BCE/ranking losses.
"""

from .config import ModelConfig, tiny_config
from .data import AnnotatedSample, GroundTruth, SyntheticSpec, generate_synthetic
from .losses import LossBreakdown, LossToggles, LossWeights, compute_loss
from .matching import MatchResult, hungarian_match, solve_assignment
from .metrics import MetricsReport, SampleGroundTruth, SamplePrediction, evaluate
from .model import ModelOutput, MomentHighlightModel
from .nn import Ctx
from .spans import span_giou, span_iou
from .tensor import Tape, Tensor
from .trainer import AdamW, TrainConfig, Trainer, evaluate_model, grad_check

__all__ = [
    "AdamW",
    "AnnotatedSample",
    "Ctx",
    "GroundTruth",
    "LossBreakdown",
    "LossToggles",
    "LossWeights",
    "MatchResult",
    "MetricsReport",
    "ModelConfig",
    "ModelOutput",
    "MomentHighlightModel",
    "SampleGroundTruth",
    "SamplePrediction",
    "SyntheticSpec",
    "Tape",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "compute_loss",
    "evaluate",
    "evaluate_model",
    "generate_synthetic",
    "grad_check",
    "hungarian_match",
    "solve_assignment",
    "span_giou",
    "span_iou",
    "tiny_config",
]

__version__ = "0.1.0"
