"""Flow-planning transformer language model (numpy, hand-written backprop)."""

from .config import ModelConfig
from .types import Candidate, LossBreakdown, PlanResult, StepLog, UtteranceRepr
from .model import DialogueModel
from .sampling import nucleus, sample_from
from .checkpoint import load_checkpoint, save_checkpoint
from .train import EpochStats, TrainingDiverged, train
from .gradcheck import GradCheckReport, grad_check, micro_config

__all__ = [
    "Candidate",
    "DialogueModel",
    "EpochStats",
    "GradCheckReport",
    "LossBreakdown",
    "ModelConfig",
    "PlanResult",
    "StepLog",
    "TrainingDiverged",
    "UtteranceRepr",
    "grad_check",
    "load_checkpoint",
    "micro_config",
    "nucleus",
    "sample_from",
    "save_checkpoint",
    "train",
]
