"""Sentence log-probabilities and word-level surprisal.

Every sentence is scored after a BOS token, so the first real token gets a
conditional probability too. Log-probabilities are kept in nats; surprisals
are reported in bits.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
import torch

from .errors import SentenceTooLong
from .model import TransformerLM
from .tokenizer import Vocab

LN2 = math.log(2.0)
_WORD_RE = re.compile(rb"\S+")


@dataclass
class ScoredSentence:
    text: str
    token_ids: list[int]
    token_surprisals: np.ndarray  # bits, one per real token
    words: list[str]
    word_surprisals: np.ndarray  # bits, one per whitespace word
    logprob: float  # nats

    @property
    def total_surprisal(self) -> float:
        return float(self.token_surprisals.sum())


class Scorer:
    """A trained model plus its tokenizer, used read-only."""

    def __init__(self, model: TransformerLM, vocab: Vocab):
        if model.config.vocab_size != vocab.size:
            raise ValueError(f"model vocab_size={model.config.vocab_size} but tokenizer has {vocab.size} tokens")
        self.model = model.eval()
        self.vocab = vocab

    @classmethod
    def from_checkpoint(cls, ckpt, vocab: Vocab) -> "Scorer":
        if ckpt.tokenizer_sha256 and ckpt.tokenizer_sha256 != vocab.sha256():
            raise ValueError("tokenizer does not match the one recorded in the checkpoint")
        return cls(ckpt.build_model(), vocab)

    def input_ids(self, text: str) -> list[int]:
        if not text or not text.strip():
            raise ValueError("cannot score an empty sentence")
        ids = [self.vocab.bos_id] + self.vocab.encode(text)
        if len(ids) > self.model.config.max_context:
            raise SentenceTooLong(
                f"sentence needs {len(ids)} positions (with BOS), max_context is {self.model.config.max_context}: {text[:60]!r}"
            )
        return ids

    def token_logprobs(self, text: str) -> tuple[list[int], np.ndarray]:
        """Token ids (without BOS) and ``log p(t_k | BOS, t_<k)`` in nats."""
        ids = self.input_ids(text)
        with torch.no_grad():
            logits = self.model(torch.tensor(ids, dtype=torch.long)).logits
            logp = torch.log_softmax(logits[:-1].double(), dim=-1)
            picked = logp.gather(-1, torch.tensor(ids[1:]).unsqueeze(-1)).squeeze(-1)
        return ids[1:], picked.numpy()

    def logprob(self, text: str) -> float:
        return sentence_logprob(self, text)

    def score(self, text: str) -> ScoredSentence:
        return word_surprisals(self, text)


def sentence_logprob(scorer: Scorer, text: str) -> float:
    """Total log-probability of ``text`` in nats, first token included."""
    _, lp = scorer.token_logprobs(text)
    return float(lp.sum())


def align_tokens_to_words(vocab: Vocab, token_ids, text: str) -> tuple[list[str], list[int]]:
    """Map each token to the whitespace-delimited word it belongs to.

    Whitespace-only tokens attach to the following word (the last word when
    trailing).
    """
    data = text.encode("utf-8")
    spans = [(m.start(), m.end()) for m in _WORD_RE.finditer(data)]
    words = [data[s:e].decode("utf-8", errors="replace") for s, e in spans]
    owner, pos, w = [], 0, 0
    for t in token_ids:
        b = vocab.token_bytes(t)
        start, end = pos, pos + len(b)
        pos = end
        core = b.strip()
        if not core:
            while w < len(spans) and spans[w][1] <= start:
                w += 1
            owner.append(min(w, len(spans) - 1))
            continue
        cstart = start + (len(b) - len(b.lstrip()))
        cend = cstart + len(core)
        while w < len(spans) and spans[w][1] <= cstart:
            w += 1
        if w >= len(spans) or not (spans[w][0] <= cstart and cend <= spans[w][1]):
            raise AssertionError(f"token {b!r} crosses a word boundary in {text!r}")
        owner.append(w)
    if pos != len(data):
        raise AssertionError("token bytes do not cover the sentence")
    return words, owner


def word_surprisals(scorer: Scorer, text: str) -> ScoredSentence:
    """Per-token and per-word surprisal (bits); a word's surprisal sums its tokens'."""
    ids, lp = scorer.token_logprobs(text)
    tok_bits = -lp / LN2
    words, owner = align_tokens_to_words(scorer.vocab, ids, text)
    word_bits = np.zeros(len(words))
    np.add.at(word_bits, np.asarray(owner, dtype=np.int64), tok_bits)
    return ScoredSentence(text, ids, tok_bits, words, word_bits, float(lp.sum()))
