from .config import ModelConfig
from .losses import binary_cross_entropy, categorical_cross_entropy, joint_loss
from .model import (
    ABLATE_GATE,
    ABLATE_RATIONALE,
    CheckpointError,
    EncoderOutput,
    InstanceTargets,
    Model,
    Prediction,
    SequenceTooLongError,
)
from .optim import AdamW, linear_schedule

__all__ = [
    "ABLATE_GATE",
    "ABLATE_RATIONALE",
    "AdamW",
    "CheckpointError",
    "EncoderOutput",
    "InstanceTargets",
    "Model",
    "ModelConfig",
    "Prediction",
    "SequenceTooLongError",
    "binary_cross_entropy",
    "categorical_cross_entropy",
    "joint_loss",
    "linear_schedule",
]
