"""Decoder-only transformer: config, network, training, sampling, profiling."""

from .attention import CATEGORIES, AttentionProfile, attention_profile, classify_token
from .checkpoint import (
    CheckpointError,
    FormatError,
    VersionError,
    load_checkpoint,
    save_checkpoint,
)
from .config import ModelConfig, TrainConfig
from .network import (
    ContextOverflowError,
    Model,
    ModelError,
    NonFiniteLossError,
    init_params,
)
from .optim import Adam, clip_global_norm, lr_at
from .sample import GenerationResult, generate, generate_batch
from .trainer import TrainResult, eval_loss, pad_batch, token_accuracy, train

__all__ = [
    "AttentionProfile", "attention_profile", "classify_token", "CATEGORIES",
    "CheckpointError", "FormatError", "VersionError",
    "load_checkpoint", "save_checkpoint",
    "ModelConfig", "TrainConfig",
    "ContextOverflowError", "Model", "ModelError", "NonFiniteLossError",
    "init_params",
    "Adam", "clip_global_norm", "lr_at",
    "GenerationResult", "generate", "generate_batch",
    "TrainResult", "eval_loss", "pad_batch", "token_accuracy", "train",
]
