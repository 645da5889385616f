"""Minimal-pair accuracy and surprisal Delta log-likelihood.

The psychometric side fits two nested ordinary least squares models per
measure, covariates only and covariates plus surprisal, and reports the gain
in Gaussian log-likelihood.
"""

from __future__ import annotations

import logging
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import SentenceTooLong

log = logging.getLogger(__name__)

SIGMA2_FLOOR = 1e-12
BASE_COVARIATES = ("word_length", "log_frequency")


# ---------------------------------------------------------------------------
# minimal pairs


@dataclass(frozen=True)
class MinimalPairRecord:
    uid: str
    phenomenon: str
    sentence_good: str
    sentence_bad: str

    def __post_init__(self):
        if not self.sentence_good.strip() or not self.sentence_bad.strip():
            raise ValueError(f"minimal pair {self.uid!r} has an empty sentence")


@dataclass
class MinimalPairResult:
    correct: dict[str, int]
    total: dict[str, int]
    excluded: list[tuple[str, str]] = field(default_factory=list)  # (uid, reason)

    def accuracy(self, phenomenon: str | None = None) -> float:
        if phenomenon is None:
            n = sum(self.total.values())
            return sum(self.correct.values()) / n if n else float("nan")
        n = self.total.get(phenomenon, 0)
        return self.correct.get(phenomenon, 0) / n if n else float("nan")

    @property
    def overall(self) -> float:
        return self.accuracy()

    @property
    def n_scored(self) -> int:
        return sum(self.total.values())

    def rows(self) -> list[tuple[str, int, int, float]]:
        out = [(p, self.correct.get(p, 0), self.total[p], self.accuracy(p)) for p in sorted(self.total)]
        out.append(("overall", sum(self.correct.values()), self.n_scored, self.overall))
        return out


def eval_minimal_pairs(logprob: Callable[[str], float], records: Iterable[MinimalPairRecord]) -> MinimalPairResult:
    """A pair is correct iff ``logprob(good) > logprob(bad)``; ties count as wrong.

    Pairs whose sentences cannot be scored (too long for the model) are
    listed in ``excluded`` and left out of every denominator.
    """
    correct: Counter = Counter()
    total: Counter = Counter()
    excluded = []
    for rec in records:
        try:
            good = logprob(rec.sentence_good)
            bad = logprob(rec.sentence_bad)
        except SentenceTooLong as exc:
            excluded.append((rec.uid, str(exc)))
            continue
        total[rec.phenomenon] += 1
        if good > bad:
            correct[rec.phenomenon] += 1
    return MinimalPairResult(dict(correct), dict(total), excluded)


# ---------------------------------------------------------------------------
# regression


@dataclass
class OlsFit:
    coef: np.ndarray
    sigma2: float
    loglik: float
    n: int
    p: int


def _has_intercept(X: np.ndarray) -> bool:
    return bool(np.any(np.all(X == X[0], axis=0) & (X[0] != 0)))


def ols_fit(X, y) -> OlsFit:
    """Least squares via QR; Gaussian ML variance ``RSS / n`` floored at 1e-12.

    ``X`` must contain an intercept (constant) column and have full column rank.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"design {X.shape} and response {y.shape} do not line up")
    n, p = X.shape
    if n <= p:
        raise ValueError(f"need more observations than predictors (n={n}, p={p})")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("design matrix or response contains non-finite values")
    if not _has_intercept(X):
        raise ValueError("design matrix has no intercept column")
    if np.linalg.matrix_rank(X) < p:
        raise ValueError("design matrix is rank deficient")
    Q, R = np.linalg.qr(X)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - X @ coef
    sigma2 = max(float(resid @ resid) / n, SIGMA2_FLOOR)
    loglik = -0.5 * n * (math.log(2 * math.pi * sigma2) + 1.0)
    return OlsFit(coef, sigma2, loglik, n, p)


@dataclass
class RegressionDataset:
    measure: str
    word_ids: list[tuple[str, int]]
    y: np.ndarray
    columns: dict[str, np.ndarray]  # word_length, log_frequency, surprisal, ...

    def __post_init__(self):
        n = len(self.y)
        for name, col in self.columns.items():
            if len(col) != n:
                raise ValueError(f"column {name} has {len(col)} rows, expected {n}")
            if not np.isfinite(col).all():
                raise ValueError(f"column {name} has missing or non-finite values")
        if not np.isfinite(self.y).all():
            raise ValueError(f"measure {self.measure} has missing or non-finite values")

    def __len__(self) -> int:
        return len(self.y)

    def design(self, names: Sequence[str]) -> np.ndarray:
        return np.column_stack([np.ones(len(self.y))] + [np.asarray(self.columns[c], dtype=np.float64) for c in names])


@dataclass
class DeltaLL:
    measure: str
    delta: float
    n: int
    base: OlsFit
    full: OlsFit | None

    @property
    def per_1000(self) -> float:
        return 1000.0 * self.delta / self.n

    @property
    def surprisal_coef(self) -> float:
        return float(self.full.coef[-1]) if self.full is not None else 0.0


def delta_loglik(data: RegressionDataset, covariates: Sequence[str] = BASE_COVARIATES,
                 predictor: str = "surprisal") -> DeltaLL:
    """``LL(intercept + covariates + predictor) - LL(intercept + covariates)``.

    A predictor that lies in the span of the base design adds nothing; that
    case returns 0 rather than failing the rank check.
    """
    Xb = data.design(covariates)
    base = ols_fit(Xb, data.y)
    Xf = data.design(list(covariates) + [predictor])
    if np.linalg.matrix_rank(Xf) <= np.linalg.matrix_rank(Xb):
        log.warning("%s: %s is collinear with the base covariates; Delta LL = 0", data.measure, predictor)
        return DeltaLL(data.measure, 0.0, len(data), base, None)
    full = ols_fit(Xf, data.y)
    return DeltaLL(data.measure, full.loglik - base.loglik, len(data), base, full)


def aggregate_delta(deltas) -> tuple[float, dict[str, float]]:
    """Mean Delta LL over measures, plus the per-measure values."""
    if isinstance(deltas, dict):
        per = {k: float(getattr(v, "delta", v)) for k, v in deltas.items()}
    else:
        per = {d.measure: float(d.delta) for d in deltas}
    if not per:
        raise ValueError("no measures to aggregate")
    return sum(per.values()) / len(per), per


# ---------------------------------------------------------------------------
# covariates


_STRIP_RE = re.compile(r"^\W+|\W+$")


def normalize_word(word: str) -> str:
    return _STRIP_RE.sub("", word.lower())


class WordFrequencies:
    """Add-one smoothed natural-log relative frequencies from a corpus."""

    def __init__(self, counts: Counter):
        self.counts = counts
        self.total = sum(counts.values())
        self.types = len(counts)

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "WordFrequencies":
        counts: Counter = Counter()
        for line in lines:
            counts.update(w for w in (normalize_word(t) for t in line.split()) if w)
        return cls(counts)

    def log_frequency(self, word: str) -> float:
        c = self.counts.get(normalize_word(word), 0)
        return math.log((c + 1) / (self.total + self.types + 1))


def word_length(word: str) -> int:
    return len(word)


@dataclass(frozen=True)
class MeasureRow:
    sentence_id: str
    word_index: int
    word: str
    measure: str
    value: float


def sentences_from_measures(rows: Sequence[MeasureRow]) -> dict[str, list[str]]:
    """Reassemble each sentence's words in ``word_index`` order (0-based, contiguous)."""
    words: dict[str, dict[int, str]] = defaultdict(dict)
    for r in rows:
        prev = words[r.sentence_id].get(r.word_index)
        if prev is not None and prev != r.word:
            raise ValueError(f"sentence {r.sentence_id} word {r.word_index}: {prev!r} vs {r.word!r}")
        words[r.sentence_id][r.word_index] = r.word
    out = {}
    for sid, by_index in words.items():
        if sorted(by_index) != list(range(len(by_index))):
            raise ValueError(f"sentence {sid}: word indices are not contiguous from 0")
        out[sid] = [by_index[i] for i in range(len(by_index))]
    return out


def build_regression_datasets(rows: Sequence[MeasureRow], score_sentence, freqs: WordFrequencies,
                              exclude_first: bool = False, exclude_last: bool = False) -> dict[str, RegressionDataset]:
    """Join measures with surprisal on (sentence_id, word_index), one dataset per measure.

    ``score_sentence`` maps a sentence string to a :class:`ScoredSentence`.
    """
    sentences = sentences_from_measures(rows)
    surprisal: dict[tuple[str, int], float] = {}
    for sid, words in sentences.items():
        scored = score_sentence(" ".join(words))
        if scored.words != words:
            raise ValueError(f"sentence {sid}: scored words {scored.words} differ from {words}")
        for i, s in enumerate(scored.word_surprisals):
            surprisal[(sid, i)] = float(s)

    grouped: dict[str, list[MeasureRow]] = defaultdict(list)
    for r in rows:
        n_words = len(sentences[r.sentence_id])
        if (exclude_first and r.word_index == 0) or (exclude_last and r.word_index == n_words - 1):
            continue
        grouped[r.measure].append(r)
    out = {}
    for measure, rs in sorted(grouped.items()):
        out[measure] = RegressionDataset(
            measure=measure,
            word_ids=[(r.sentence_id, r.word_index) for r in rs],
            y=np.array([r.value for r in rs], dtype=np.float64),
            columns={
                "word_length": np.array([word_length(r.word) for r in rs], dtype=np.float64),
                "log_frequency": np.array([freqs.log_frequency(r.word) for r in rs], dtype=np.float64),
                "surprisal": np.array([surprisal[(r.sentence_id, r.word_index)] for r in rs], dtype=np.float64),
            },
        )
    return out
