"""Working-memory constraints on causal self-attention.

Four mechanisms are provided, each acting on one stage of the attention
computation:

* fixed window and primacy/recency bias act on pre-softmax logits
  (additive -inf mask, additive per-key bias);
* exponential and logistic decay act on post-softmax probabilities and
  renormalize every row afterwards.

All functions are differentiable torch operations. Inputs may carry leading
batch/head dimensions; the last two dimensions are (query, key).
"""

from __future__ import annotations

import enum
import functools
import math
import re
from dataclasses import dataclass

import numpy as np
import torch

__all__ = [
    "Stage",
    "Kind",
    "AttentionMatrix",
    "ConstraintSpec",
    "causal_mask",
    "fixed_window_mask",
    "apply_additive_mask",
    "masked_softmax",
    "primacy_weights",
    "recency_weights",
    "primacy_recency_bias",
    "add_key_bias",
    "exponential_kernel",
    "exponential_decay_mix",
    "logistic_weights",
    "logistic_decay_reweight",
    "apply_constraint",
]


class Stage(enum.Enum):
    LOGITS = "logits"
    PROBS = "probs"


class Kind(enum.Enum):
    NONE = "none"
    FIXED_WINDOW = "fixed_window"
    PRIMACY_RECENCY = "primacy_recency"
    PRIMACY_ONLY = "primacy_only"
    RECENCY_ONLY = "recency_only"
    EXP_DECAY = "exp_decay"
    LOGISTIC = "logistic"


# Parameters each kind requires, in canonical text order.
_PARAMS: dict[Kind, tuple[str, ...]] = {
    Kind.NONE: (),
    Kind.FIXED_WINDOW: ("W",),
    Kind.PRIMACY_RECENCY: (),
    Kind.PRIMACY_ONLY: (),
    Kind.RECENCY_ONLY: (),
    Kind.EXP_DECAY: ("lambda", "alpha"),
    Kind.LOGISTIC: ("k", "m"),
}

PRIMACY_RECENCY_FAMILY = (Kind.PRIMACY_RECENCY, Kind.PRIMACY_ONLY, Kind.RECENCY_ONLY)
LOGIT_KINDS = (Kind.FIXED_WINDOW,) + PRIMACY_RECENCY_FAMILY
PROB_KINDS = (Kind.EXP_DECAY, Kind.LOGISTIC)


@dataclass(frozen=True)
class AttentionMatrix:
    """Attention scores tagged with the stage they belong to."""

    data: torch.Tensor
    stage: Stage

    def __post_init__(self):
        if self.data.dim() < 2 or self.data.shape[-1] != self.data.shape[-2]:
            raise ValueError(f"attention matrix must be square in its last two dims, got {tuple(self.data.shape)}")

    @property
    def L(self) -> int:
        return self.data.shape[-1]

    @classmethod
    def logits(cls, data):
        return cls(data, Stage.LOGITS)

    @classmethod
    def probs(cls, data):
        return cls(data, Stage.PROBS)


@dataclass(frozen=True)
class ConstraintSpec:
    """Selects one attention constraint and its fixed hyperparameters.

    The primacy/recency weights are learnable and live in the model, so the
    primacy/recency kinds carry no parameters here.

    Text form (used in configs and checkpoints)::

        none | fixed_window:W=5 | primacy_recency | primacy_only | recency_only
        exp_decay:lambda=82.86,alpha=0.37 | logistic:k=0.4,m=12.0
    """

    kind: Kind = Kind.NONE
    W: int | None = None
    lam: float | None = None
    alpha: float | None = None
    k_steep: float | None = None
    m_mid: float | None = None

    def __post_init__(self):
        given = {name for name, value in self._named().items() if value is not None}
        wanted = set(_PARAMS[self.kind])
        if given != wanted:
            missing = sorted(wanted - given)
            extra = sorted(given - wanted)
            raise ValueError(f"{self.kind.value}: missing parameters {missing}, unexpected parameters {extra}")
        if self.kind is Kind.FIXED_WINDOW:
            if isinstance(self.W, bool) or not isinstance(self.W, (int, np.integer)) or self.W < 1:
                raise ValueError(f"window size W must be an integer >= 1, got {self.W!r}")
        elif self.kind is Kind.EXP_DECAY:
            if not self.lam > 0 or not math.isfinite(self.lam):
                raise ValueError(f"decay rate lambda must be > 0, got {self.lam}")
            if not 0.0 <= self.alpha <= 1.0:
                raise ValueError(f"mixing weight alpha must lie in [0, 1], got {self.alpha}")
        elif self.kind is Kind.LOGISTIC:
            if not self.k_steep > 0 or not math.isfinite(self.k_steep):
                raise ValueError(f"steepness k must be > 0, got {self.k_steep}")
            if not self.m_mid > 0 or not math.isfinite(self.m_mid):
                raise ValueError(f"midpoint m must be > 0, got {self.m_mid}")

    def _named(self) -> dict:
        return {"W": self.W, "lambda": self.lam, "alpha": self.alpha, "k": self.k_steep, "m": self.m_mid}

    # constructors ---------------------------------------------------------

    @classmethod
    def none(cls):
        return cls(Kind.NONE)

    @classmethod
    def fixed_window(cls, W: int):
        return cls(Kind.FIXED_WINDOW, W=W)

    @classmethod
    def primacy_recency(cls):
        return cls(Kind.PRIMACY_RECENCY)

    @classmethod
    def primacy_only(cls):
        return cls(Kind.PRIMACY_ONLY)

    @classmethod
    def recency_only(cls):
        return cls(Kind.RECENCY_ONLY)

    @classmethod
    def exp_decay(cls, lam: float = 82.86, alpha: float = 0.37):
        return cls(Kind.EXP_DECAY, lam=float(lam), alpha=float(alpha))

    @classmethod
    def logistic(cls, k_steep: float = 0.4, m_mid: float = 12.0):
        return cls(Kind.LOGISTIC, k_steep=float(k_steep), m_mid=float(m_mid))

    # stage bookkeeping ----------------------------------------------------

    @property
    def input_stage(self) -> Stage | None:
        """Stage the mechanism consumes; ``None`` for the identity."""
        if self.kind in LOGIT_KINDS:
            return Stage.LOGITS
        if self.kind in PROB_KINDS:
            return Stage.PROBS
        return None

    @property
    def learns_primacy(self) -> bool:
        return self.kind in (Kind.PRIMACY_RECENCY, Kind.PRIMACY_ONLY)

    @property
    def learns_recency(self) -> bool:
        return self.kind in (Kind.PRIMACY_RECENCY, Kind.RECENCY_ONLY)

    # text encoding --------------------------------------------------------

    def __str__(self) -> str:
        names = _PARAMS[self.kind]
        if not names:
            return self.kind.value
        values = self._named()
        return self.kind.value + ":" + ",".join(f"{n}={values[n]!r}" for n in names)

    @classmethod
    def parse(cls, text: str) -> "ConstraintSpec":
        text = text.strip()
        head, sep, tail = text.partition(":")
        if sep and not tail:
            raise ValueError(f"empty parameter list in {text!r}")
        try:
            kind = Kind(head)
        except ValueError:
            known = ", ".join(k.value for k in Kind)
            raise ValueError(f"unknown constraint kind {head!r} (known: {known})") from None
        params: dict[str, str] = {}
        if tail:
            for item in tail.split(","):
                m = re.fullmatch(r"\s*([A-Za-z_]+)\s*=\s*(\S+)\s*", item)
                if not m:
                    raise ValueError(f"malformed constraint parameter {item!r} in {text!r}")
                if m.group(1) in params:
                    raise ValueError(f"duplicate constraint parameter {m.group(1)!r} in {text!r}")
                params[m.group(1)] = m.group(2)
        allowed = _PARAMS[kind]
        unknown = sorted(set(params) - set(allowed))
        if unknown:
            raise ValueError(f"{kind.value} does not take parameters {unknown}")
        kwargs = {}
        try:
            if "W" in params:
                kwargs["W"] = int(params["W"])
            for key, field in (("lambda", "lam"), ("alpha", "alpha"), ("k", "k_steep"), ("m", "m_mid")):
                if key in params:
                    kwargs[field] = float(params[key])
        except ValueError:
            raise ValueError(f"non-numeric constraint parameter in {text!r}") from None
        return cls(kind, **kwargs)


# ---------------------------------------------------------------------------
# masks and softmax


def _check_length(L: int, name: str = "L") -> None:
    if isinstance(L, bool) or int(L) != L or L < 1:
        raise ValueError(f"{name} must be a positive integer, got {L!r}")


def causal_mask(L: int, dtype=torch.float64, device=None) -> torch.Tensor:
    _check_length(L)
    return torch.full((L, L), float("-inf"), dtype=dtype, device=device).triu(1)


def fixed_window_mask(L: int, W: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Additive mask: 0 where ``max(0, i-W+1) <= j <= i``, ``-inf`` elsewhere."""
    _check_length(L)
    _check_length(W, "W")
    i = torch.arange(L, device=device).unsqueeze(1)
    j = torch.arange(L, device=device).unsqueeze(0)
    allowed = (j <= i) & (j >= i - W + 1)
    mask = torch.zeros((L, L), dtype=dtype, device=device)
    return mask.masked_fill(~allowed, float("-inf"))


def apply_additive_mask(scores: AttentionMatrix, mask: torch.Tensor) -> AttentionMatrix:
    if scores.stage is not Stage.LOGITS:
        raise ValueError("additive masks apply to pre-softmax logits only")
    if mask.shape[-2:] != scores.data.shape[-2:]:
        raise ValueError(f"mask shape {tuple(mask.shape)} does not match scores {tuple(scores.data.shape)}")
    return AttentionMatrix.logits(scores.data + mask.to(scores.data.dtype))


def masked_softmax(scores: AttentionMatrix) -> AttentionMatrix:
    """Row softmax; ``-inf`` entries become exact zeros.

    Every row must keep at least one finite entry (the diagonal always does
    under causal and window masks).
    """
    if scores.stage is not Stage.LOGITS:
        raise ValueError("softmax expects logits")
    return AttentionMatrix.probs(torch.softmax(scores.data, dim=-1))


# ---------------------------------------------------------------------------
# primacy / recency


@functools.lru_cache(maxsize=256)
def _primacy_np(L: int) -> np.ndarray:
    e = np.exp(-np.arange(L, dtype=np.float64) / L)
    p = e / e.sum()
    p.setflags(write=False)
    return p


def primacy_weights(L: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Normalized ``exp(-i/L)`` over positions ``i = 0..L-1``."""
    _check_length(L)
    return torch.tensor(_primacy_np(int(L)), dtype=dtype, device=device)


def recency_weights(L: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Normalized ``exp(-(L-1-i)/L)``; the mirror image of the primacy weights."""
    _check_length(L)
    return torch.tensor(_primacy_np(int(L))[::-1].copy(), dtype=dtype, device=device)


def primacy_recency_bias(p: torch.Tensor, r: torch.Tensor, w_primacy, w_recency) -> torch.Tensor:
    """Per-key bias ``b = w_primacy * p + w_recency * r``."""
    if p.shape != r.shape or p.dim() != 1:
        raise ValueError(f"primacy/recency vectors must be 1-D of equal length, got {tuple(p.shape)} and {tuple(r.shape)}")
    return w_primacy * p + w_recency * r


def add_key_bias(scores: AttentionMatrix, bias: torch.Tensor) -> AttentionMatrix:
    """``a'_ij = a_ij + b_j``: the bias is indexed by key position."""
    if scores.stage is not Stage.LOGITS:
        raise ValueError("key bias applies to pre-softmax logits only")
    if bias.shape != (scores.L,):
        raise ValueError(f"bias of shape {tuple(bias.shape)} does not match sequence length {scores.L}")
    return AttentionMatrix.logits(scores.data + bias.to(scores.data.dtype))


# ---------------------------------------------------------------------------
# decay mechanisms (post-softmax)


def _check_stochastic(probs: AttentionMatrix) -> None:
    if probs.stage is not Stage.PROBS:
        raise ValueError("decay mechanisms expect post-softmax probabilities")
    a = probs.data.detach()
    L = probs.L
    tol = max(1e-6, 16 * torch.finfo(a.dtype).eps * L)
    upper = torch.ones(L, L, dtype=torch.bool, device=a.device).triu(1)
    if not torch.isfinite(a).all():
        raise ValueError("attention probabilities contain non-finite entries")
    if (a < 0).any() or (a > 1 + tol).any():
        raise ValueError("attention probabilities must lie in [0, 1]")
    if (a[..., upper] != 0).any():
        raise ValueError("attention probabilities put mass on future positions")
    dev = (a.sum(-1) - 1).abs().max().item()
    if dev > tol:
        raise ValueError(f"attention rows do not sum to 1 (max deviation {dev:.3g})")


def _renormalize(a: torch.Tensor) -> torch.Tensor:
    return a / a.sum(-1, keepdim=True)


def exponential_kernel(L: int, lam: float, dtype=torch.float64, device=None) -> torch.Tensor:
    """``exp(-|i-j| * lam)`` on the causal prefix, zero above the diagonal."""
    _check_length(L)
    i = torch.arange(L, device=device).unsqueeze(1)
    j = torch.arange(L, device=device).unsqueeze(0)
    dist = (i - j).to(dtype)
    kern = torch.exp(-dist.abs() * lam)
    return kern.masked_fill(j > i, 0.0)


def exponential_decay_mix(probs: AttentionMatrix, lam: float, alpha: float, validate: bool = True) -> AttentionMatrix:
    """Mix probabilities with the raw exponential kernel, then renormalize rows.

    ``a'_ij = (1 - alpha) * a_ij + alpha * exp(-|i-j| * lam)`` for ``j <= i``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if validate:
        _check_stochastic(probs)
    a = probs.data
    kern = exponential_kernel(probs.L, lam, dtype=a.dtype, device=a.device)
    return AttentionMatrix.probs(_renormalize((1.0 - alpha) * a + alpha * kern))


def logistic_weights(L: int, k_steep: float, m_mid: float, dtype=torch.float64, device=None) -> torch.Tensor:
    """``1 / (1 + exp(k (d - m)))`` with ``d = max(1, i - j + 1)``; zero above the diagonal."""
    _check_length(L)
    if not k_steep > 0:
        raise ValueError(f"steepness k must be > 0, got {k_steep}")
    if not m_mid > 0:
        raise ValueError(f"midpoint m must be > 0, got {m_mid}")
    i = torch.arange(L, device=device).unsqueeze(1)
    j = torch.arange(L, device=device).unsqueeze(0)
    d = (i - j + 1).clamp(min=1).to(dtype)
    w = torch.sigmoid(-k_steep * (d - m_mid))
    return w.masked_fill(j > i, 0.0)


def logistic_decay_reweight(probs: AttentionMatrix, k_steep: float, m_mid: float, validate: bool = True) -> AttentionMatrix:
    """Multiply probabilities by the logistic distance prior, then renormalize rows."""
    w = logistic_weights(probs.L, k_steep, m_mid, dtype=probs.data.dtype, device=probs.data.device)
    if validate:
        _check_stochastic(probs)
    return AttentionMatrix.probs(_renormalize(probs.data * w))


# ---------------------------------------------------------------------------
# dispatch


def apply_constraint(spec: ConstraintSpec, scores: AttentionMatrix, w_primacy=None, w_recency=None,
                     validate: bool = True) -> AttentionMatrix:
    """Apply ``spec`` to attention at the stage it requires.

    Fixed window and the primacy/recency family take and return logits;
    the decay kinds take and return probabilities; ``none`` returns its input.
    Frozen primacy/recency weights default to 0; learnable ones default to 0.5.
    """
    kind = spec.kind
    if kind is Kind.NONE:
        return scores
    if scores.stage is not spec.input_stage:
        raise ValueError(f"{kind.value} operates on {spec.input_stage.value}, got {scores.stage.value}")
    data = scores.data
    if kind is Kind.FIXED_WINDOW:
        return apply_additive_mask(scores, fixed_window_mask(scores.L, spec.W, dtype=data.dtype, device=data.device))
    if kind in PRIMACY_RECENCY_FAMILY:
        if not spec.learns_primacy:
            w_primacy = 0.0
        elif w_primacy is None:
            w_primacy = 0.5
        if not spec.learns_recency:
            w_recency = 0.0
        elif w_recency is None:
            w_recency = 0.5
        p = primacy_weights(scores.L, dtype=data.dtype, device=data.device)
        r = recency_weights(scores.L, dtype=data.dtype, device=data.device)
        return add_key_bias(scores, primacy_recency_bias(p, r, w_primacy, w_recency))
    if kind is Kind.EXP_DECAY:
        return exponential_decay_mix(scores, spec.lam, spec.alpha, validate=validate)
    if kind is Kind.LOGISTIC:
        return logistic_decay_reweight(scores, spec.k_steep, spec.m_mid, validate=validate)
    raise AssertionError(kind)
