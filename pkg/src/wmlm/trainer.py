"""Training from scratch: batching, AdamW, global-norm clipping, the loop."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .errors import ConfigError, NonFiniteGradientError, TrainingDiverged
from .model import ModelConfig, TransformerLM, backward
from .tokenizer import Vocab

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    weight_decay: float = 0.01
    batch_size: int = 64
    grad_clip: float = 1.0
    epochs: int = 5
    seed: int = 0
    sequence_length: int = 64
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    max_steps: int = 0  # 0: no cap
    checkpoint_every: int = 0  # 0: end of each epoch

    def __post_init__(self):
        positive = ("learning_rate", "batch_size", "grad_clip", "epochs", "sequence_length", "adam_epsilon")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must lie in [0, 1), got {getattr(self, name)}")
        if self.max_steps < 0 or self.checkpoint_every < 0:
            raise ConfigError("max_steps and checkpoint_every must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def tokenize_corpus(lines, vocab: Vocab) -> np.ndarray:
    """One token stream for the whole corpus, each non-blank line opened by BOS."""
    out: list[int] = []
    for line in lines:
        line = line.rstrip("\n")
        if line.strip():
            out.append(vocab.bos_id)
            out.extend(vocab.encode(line))
    return np.asarray(out, dtype=np.int64)


def chunk_stream(stream, sequence_length: int) -> np.ndarray:
    stream = np.asarray(stream, dtype=np.int64)
    n = len(stream) // sequence_length
    if n == 0:
        raise ValueError(f"token stream of length {len(stream)} is shorter than sequence_length={sequence_length}")
    return stream[: n * sequence_length].reshape(n, sequence_length)


def make_batches(stream, sequence_length: int, batch_size: int, seed: int, epoch: int = 0) -> Iterator[torch.Tensor]:
    """Contiguous fixed-length chunks in a seeded per-epoch order; the final batch may be short."""
    chunks = chunk_stream(stream, sequence_length)
    order = np.random.default_rng([seed, epoch]).permutation(len(chunks))
    for start in range(0, len(order), batch_size):
        yield torch.from_numpy(chunks[order[start:start + batch_size]])


@dataclass
class Moments:
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    def flat(self) -> dict[str, np.ndarray]:
        out = {f"m.{k}": t.detach().cpu().numpy() for k, t in self.m.items()}
        out.update({f"v.{k}": t.detach().cpu().numpy() for k, t in self.v.items()})
        return out


def adamw_step(params: dict[str, torch.Tensor], grads: dict[str, torch.Tensor], moments: Moments,
               config: TrainConfig, step: int, decay: dict[str, bool] | None = None):
    """One bias-corrected Adam update with decoupled weight decay, in place.

    ``decay[name]`` selects which tensors are shrunk by ``lr * weight_decay``;
    by default all are. Returns ``(params, moments)``.
    """
    if step < 1:
        raise ValueError("step counts from 1")
    for name, g in grads.items():
        if name in params and not torch.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name} at step {step}")
    lr, b1, b2, eps = config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_epsilon
    bc1 = 1.0 - b1 ** step
    bc2 = 1.0 - b2 ** step
    with torch.no_grad():
        for name, p in params.items():
            g = grads[name]
            if name not in moments.m:
                moments.m[name] = torch.zeros_like(p)
                moments.v[name] = torch.zeros_like(p)
            m, v = moments.m[name], moments.v[name]
            if config.weight_decay and (decay is None or decay.get(name, True)):
                p.mul_(1.0 - lr * config.weight_decay)
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            denom = (v / bc2).sqrt_().add_(eps)
            p.addcdiv_(m / bc1, denom, value=-lr)
    return params, moments


def global_norm(grads: dict[str, torch.Tensor]) -> float:
    return math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values()))


def clip_gradients(grads: dict[str, torch.Tensor], max_norm: float) -> tuple[dict[str, torch.Tensor], float]:
    """Scale every gradient by ``max_norm / N`` when the global L2 norm ``N`` exceeds ``max_norm``."""
    if not max_norm > 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = global_norm(grads)
    if total <= max_norm:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


@dataclass
class TrainResult:
    model: TransformerLM
    losses: list[float]
    steps: int
    moments: Moments


def train(stream, model_config: ModelConfig, config: TrainConfig, *, checkpoint_path=None, log_path=None,
          tokenizer_sha256: str = "", tokenizer_path: str = "",
          on_step: Callable[[int, int, float], None] | None = None) -> TrainResult:
    """Train a fresh model on a token stream.

    Writes ``step<TAB>epoch<TAB>loss`` per step to ``log_path`` and the model
    to ``checkpoint_path`` at the end of every epoch (or every
    ``checkpoint_every`` steps) and at the end of training. A NaN loss raises
    :class:`TrainingDiverged`; the last checkpoint written stays on disk.
    """
    if config.epochs < 1:
        raise ConfigError("epochs must be >= 1")
    if config.sequence_length > model_config.max_context:
        raise ConfigError(f"sequence_length={config.sequence_length} exceeds max_context={model_config.max_context}")
    stream = np.asarray(stream, dtype=np.int64)
    chunk_stream(stream, config.sequence_length)  # fail early on short corpora
    if stream.size and stream.max() >= model_config.vocab_size:
        raise ConfigError(f"corpus contains token id {stream.max()} >= vocab_size={model_config.vocab_size}")

    model = TransformerLM(model_config, seed=config.seed)
    model.train()
    params = {n: p for n, p in model.named_parameters() if p.requires_grad}
    decay = model.decay_mask()
    moments = Moments()
    losses: list[float] = []
    step = 0
    log_fh = open(log_path, "a", encoding="utf-8") if log_path else None

    def save():
        if checkpoint_path:
            save_checkpoint(checkpoint_path, model, train_config=config.to_dict(), step=step,
                            tokenizer_sha256=tokenizer_sha256, tokenizer_path=tokenizer_path,
                            moments=moments.flat())

    try:
        done = False
        for epoch in range(config.epochs):
            for batch in make_batches(stream, config.sequence_length, config.batch_size, config.seed, epoch):
                try:
                    loss, grads = backward(model, batch)
                except NonFiniteGradientError as exc:
                    raise TrainingDiverged(f"{exc} at step {step + 1} (epoch {epoch})") from exc
                if not math.isfinite(loss):
                    raise TrainingDiverged(f"loss became {loss} at step {step + 1} (epoch {epoch})")
                step += 1
                grads = {n: g for n, g in grads.items() if n in params}
                grads, _ = clip_gradients(grads, config.grad_clip)
                adamw_step(params, grads, moments, config, step, decay)
                losses.append(loss)
                if log_fh:
                    log_fh.write(f"{step}\t{epoch}\t{loss:.6f}\n")
                if on_step:
                    on_step(step, epoch, loss)
                if config.checkpoint_every and step % config.checkpoint_every == 0:
                    save()
                if config.max_steps and step >= config.max_steps:
                    done = True
                    break
            if not config.checkpoint_every:
                save()
            if done:
                break
        save()
    finally:
        if log_fh:
            log_fh.close()
    model.eval()
    return TrainResult(model, losses, step, moments)
