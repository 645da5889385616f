"""Decoder-only language models with working-memory attention constraints."""

from .constraints import AttentionMatrix, ConstraintSpec, Kind, Stage, apply_constraint
from .model import ModelConfig, TransformerLM
from .scoring import Scorer
from .tokenizer import Vocab, train_bpe
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AttentionMatrix", "ConstraintSpec", "Kind", "Stage", "apply_constraint",
    "ModelConfig", "TransformerLM", "Scorer", "Vocab", "train_bpe", "TrainConfig", "train",
]
