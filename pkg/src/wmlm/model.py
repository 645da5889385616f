"""GPT-2-style decoder-only transformer with a constraint hook in every head.

Pre-norm residual blocks, learned absolute positions, tanh-GELU MLP, output
head tied to the token embedding by default, no dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .constraints import (
    PRIMACY_RECENCY_FAMILY,
    AttentionMatrix,
    ConstraintSpec,
    Stage,
    apply_constraint,
    causal_mask,
)
from .errors import NonFiniteGradientError, SentenceTooLong


@dataclass
class ModelConfig:
    vocab_size: int
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    max_context: int = 64
    constraint: ConstraintSpec = field(default_factory=ConstraintSpec.none)
    tied_head: bool = True

    def __post_init__(self):
        if isinstance(self.constraint, str):
            self.constraint = ConstraintSpec.parse(self.constraint)
        for name in ("vocab_size", "n_layers", "d_model", "n_heads", "max_context"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "n_layers": self.n_layers,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "max_context": self.max_context,
            "constraint": str(self.constraint),
            "tied_head": self.tied_head,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardRecord:
    logits: torch.Tensor
    # per layer: (batch, heads, L, L) post-constraint probabilities
    attentions: list[torch.Tensor] | None = None
    # n_layers + 1 entries of (batch, L, d_model); entry 0 is embedding + position
    hiddens: list[torch.Tensor] | None = None


class Attention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.d_head = config.d_head
        self.constraint = config.constraint
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model)
        self.proj = nn.Linear(config.d_model, config.d_model)
        spec = config.constraint
        if spec.kind in PRIMACY_RECENCY_FAMILY:
            # Both scalars always exist so checkpoints share one layout; the
            # frozen one in an ablation sits at 0 and is never updated.
            self.w_primacy = nn.Parameter(torch.tensor(0.5 if spec.learns_primacy else 0.0),
                                          requires_grad=spec.learns_primacy)
            self.w_recency = nn.Parameter(torch.tensor(0.5 if spec.learns_recency else 0.0),
                                          requires_grad=spec.learns_recency)
        else:
            self.w_primacy = self.w_recency = None

    def forward(self, x: torch.Tensor):
        B, L, D = x.shape
        q, k, v = self.qkv(x).split(D, dim=-1)
        q = q.view(B, L, self.n_heads, self.d_head).transpose(1, 2)
        k = k.view(B, L, self.n_heads, self.d_head).transpose(1, 2)
        v = v.view(B, L, self.n_heads, self.d_head).transpose(1, 2)
        scores = (q @ k.transpose(-2, -1)) / math.sqrt(self.d_head)
        scores = AttentionMatrix.logits(scores + causal_mask(L, dtype=x.dtype, device=x.device))

        spec = self.constraint
        if spec.input_stage is Stage.LOGITS:
            scores = apply_constraint(spec, scores, self.w_primacy, self.w_recency)
        probs = AttentionMatrix.probs(torch.softmax(scores.data, dim=-1))
        if spec.input_stage is Stage.PROBS:
            probs = apply_constraint(spec, probs, validate=False)

        out = (probs.data @ v).transpose(1, 2).reshape(B, L, D)
        return self.proj(out), probs.data


class MLP(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.fc = nn.Linear(config.d_model, 4 * config.d_model)
        self.proj = nn.Linear(4 * config.d_model, config.d_model)

    def forward(self, x):
        return self.proj(F.gelu(self.fc(x), approximate="tanh"))


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = Attention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = MLP(config)

    def forward(self, x):
        a, probs = self.attn(self.ln1(x))
        x = x + a
        x = x + self.mlp(self.ln2(x))
        return x, probs


class TransformerLM(nn.Module):
    def __init__(self, config: ModelConfig, seed: int | None = 0):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Parameter(torch.empty(config.vocab_size, config.d_model))
        self.pos_emb = nn.Parameter(torch.empty(config.max_context, config.d_model))
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(config.d_model)
        self.head = None if config.tied_head else nn.Parameter(torch.empty(config.vocab_size, config.d_model))
        if seed is not None:
            self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        """normal(0, 0.02) weights and embeddings, zero biases, unit LN gains."""
        gen = torch.Generator().manual_seed(seed)
        with torch.no_grad():
            for name, p in self.named_parameters():
                if name.endswith(("w_primacy", "w_recency")):
                    continue
                if ".ln" in name or name.startswith("ln_f"):
                    p.fill_(1.0 if name.endswith("weight") else 0.0)
                elif name.endswith("bias"):
                    p.zero_()
                else:
                    p.copy_(torch.randn(p.shape, generator=gen, dtype=torch.float64).to(p.dtype) * 0.02)

    def forward(self, ids: torch.Tensor, capture_attention: bool = False, capture_hidden: bool = False) -> ForwardRecord:
        squeeze = ids.dim() == 1
        if squeeze:
            ids = ids.unsqueeze(0)
        B, L = ids.shape
        if L > self.config.max_context:
            raise SentenceTooLong(f"sequence of {L} tokens exceeds max_context={self.config.max_context}")
        if L < 1:
            raise ValueError("empty input sequence")
        if ids.min() < 0 or ids.max() >= self.config.vocab_size:
            raise ValueError(f"token id out of range [0, {self.config.vocab_size})")

        x = self.tok_emb[ids] + self.pos_emb[:L]
        attentions = [] if capture_attention else None
        hiddens = [x] if capture_hidden else None
        for block in self.blocks:
            x, probs = block(x)
            if capture_attention:
                attentions.append(probs)
            if capture_hidden:
                hiddens.append(x)
        head = self.tok_emb if self.head is None else self.head
        logits = self.ln_f(x) @ head.T

        if squeeze:
            logits = logits[0]
            attentions = [a[0] for a in attentions] if attentions is not None else None
            hiddens = [h[0] for h in hiddens] if hiddens is not None else None
        return ForwardRecord(logits, attentions, hiddens)

    def decay_mask(self) -> dict[str, bool]:
        """Which parameters receive decoupled weight decay (not biases, not LayerNorm)."""
        out = {}
        for name, _ in self.named_parameters():
            is_ln = ".ln" in name or name.startswith("ln_f")
            out[name] = not (is_ln or name.endswith("bias"))
        return out

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def forward(model: TransformerLM, ids, capture_attention: bool = False, capture_hidden: bool = False) -> ForwardRecord:
    if not torch.is_tensor(ids):
        ids = torch.as_tensor(ids, dtype=torch.long)
    return model(ids, capture_attention=capture_attention, capture_hidden=capture_hidden)


def cross_entropy_loss(logits: torch.Tensor, targets: torch.Tensor) -> torch.Tensor:
    """Mean negative log-likelihood in nats per token."""
    if logits.shape[:-1] != targets.shape:
        raise ValueError(f"logits {tuple(logits.shape)} do not match targets {tuple(targets.shape)}")
    logp = torch.log_softmax(logits, dim=-1)
    return -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1).mean()


def lm_loss(model: TransformerLM, batch: torch.Tensor) -> torch.Tensor:
    """Next-token loss: position t predicts token t+1; the last position has no target."""
    logits = model(batch).logits
    return cross_entropy_loss(logits[..., :-1, :], batch[..., 1:])


def backward(model: TransformerLM, batch: torch.Tensor) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss and its gradient for every named parameter.

    Frozen parameters (the fixed weight of a primacy/recency ablation) get an
    explicit zero gradient.
    """
    model.zero_grad(set_to_none=True)
    loss = lm_loss(model, batch)
    loss.backward()
    grads = {}
    for name, p in model.named_parameters():
        g = torch.zeros_like(p) if p.grad is None else p.grad.detach().clone()
        if not torch.isfinite(g).all():
            raise NonFiniteGradientError(f"non-finite gradient in {name}")
        grads[name] = g
    return loss.item(), grads
