"""Dataset readers, writers and synthetic generators.

Formats:

* corpus: UTF-8 text, one sentence or document per line;
* minimal pairs: one JSON object per line with ``uid``, ``phenomenon``,
  ``sentence_good``, ``sentence_bad`` (other fields are ignored);
* psychometric measures: CSV with header
  ``sentence_id,word_index,word,measure,value`` (word_index is 0-based);
* parses: 10-column tab-separated dependency format, one token per line,
  blank line between sentences, ``#`` comment lines allowed.

Readers are strict: any malformed line raises :class:`FormatError` naming
the file and line number.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import random
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import FormatError
from .evaluation import MeasureRow, MinimalPairRecord, WordFrequencies, word_length
from .probe import ParsedSentence

log = logging.getLogger(__name__)

MEASURE_HEADER = ["sentence_id", "word_index", "word", "measure", "value"]
PAIR_FIELDS = ("uid", "phenomenon", "sentence_good", "sentence_bad")


def _read_lines(path) -> list[str]:
    raw = Path(path).read_bytes()
    lines = raw.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    out = []
    for no, line in enumerate(lines, 1):
        try:
            out.append(line.decode("utf-8").rstrip("\r"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"{path}:{no}: invalid UTF-8 ({exc.reason})") from None
    return out


def read_corpus(path) -> list[str]:
    """Non-blank lines of a text corpus."""
    return [line for line in _read_lines(path) if line.strip()]


# ---------------------------------------------------------------------------
# minimal pairs


def read_pairs(path) -> list[MinimalPairRecord]:
    records, seen = [], set()
    for no, line in enumerate(_read_lines(path), 1):
        if not line.strip():
            raise FormatError(f"{path}:{no}: blank line")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}:{no}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise FormatError(f"{path}:{no}: expected a JSON object")
        missing = [f for f in PAIR_FIELDS if f not in obj]
        if missing:
            raise FormatError(f"{path}:{no}: missing fields {missing}")
        if not all(isinstance(obj[f], str) for f in PAIR_FIELDS):
            raise FormatError(f"{path}:{no}: fields {list(PAIR_FIELDS)} must be strings")
        if obj["uid"] in seen:
            raise FormatError(f"{path}:{no}: duplicate uid {obj['uid']!r}")
        seen.add(obj["uid"])
        try:
            records.append(MinimalPairRecord(*(obj[f] for f in PAIR_FIELDS)))
        except ValueError as exc:
            raise FormatError(f"{path}:{no}: {exc}") from None
    if not records:
        log.warning("%s: no minimal pairs", path)
    return records


def write_pairs(path, records: Sequence[MinimalPairRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({f: getattr(r, f) for f in PAIR_FIELDS}, ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# psychometric measures


def read_measures(path) -> list[MeasureRow]:
    lines = _read_lines(path)
    if not lines:
        raise FormatError(f"{path}:1: missing header")
    rows = []
    reader = csv.reader(lines)
    header = next(reader)
    if header != MEASURE_HEADER:
        raise FormatError(f"{path}:1: expected header {','.join(MEASURE_HEADER)}, got {','.join(header)}")
    seen = set()
    for no, fields in enumerate(reader, 2):
        if len(fields) != 5:
            raise FormatError(f"{path}:{no}: expected 5 fields, got {len(fields)}")
        sid, idx, word, measure, value = fields
        try:
            idx_i = int(idx)
            val = float(value)
        except ValueError:
            raise FormatError(f"{path}:{no}: word_index must be an integer and value a number") from None
        if idx_i < 0 or not word or not measure or not sid:
            raise FormatError(f"{path}:{no}: empty field or negative word_index")
        if not np.isfinite(val):
            raise FormatError(f"{path}:{no}: value is not finite")
        key = (sid, idx_i, measure)
        if key in seen:
            raise FormatError(f"{path}:{no}: duplicate row for sentence {sid} word {idx_i} measure {measure}")
        seen.add(key)
        rows.append(MeasureRow(sid, idx_i, word, measure, val))
    return rows


def write_measures(path, rows: Sequence[MeasureRow]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(MEASURE_HEADER)
    for r in rows:
        w.writerow([r.sentence_id, r.word_index, r.word, r.measure, repr(float(r.value))])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


# ---------------------------------------------------------------------------
# dependency parses


def read_parses(path) -> list[ParsedSentence]:
    """Read sentences; multiword-token ranges (``1-2``) and empty nodes (``1.1``) are skipped."""
    sentences: list[ParsedSentence] = []
    words: list[str] = []
    heads: list[int] = []
    rels: list[str] = []
    start = 1

    def flush(no):
        nonlocal words, heads, rels
        if words:
            try:
                sentences.append(ParsedSentence(words, heads, rels))
            except FormatError as exc:
                raise FormatError(f"{path}:{start}-{no}: {exc}") from None
        words, heads, rels = [], [], []

    lines = _read_lines(path)
    for no, line in enumerate(lines, 1):
        if not line.strip():
            flush(no)
            continue
        if line.startswith("#"):
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise FormatError(f"{path}:{no}: expected 10 tab-separated columns, got {len(cols)}")
        if "-" in cols[0] or "." in cols[0]:
            continue
        if not words:
            start = no
        try:
            idx, head = int(cols[0]), int(cols[6])
        except ValueError:
            raise FormatError(f"{path}:{no}: index and head must be integers") from None
        if idx != len(words) + 1:
            raise FormatError(f"{path}:{no}: expected token index {len(words) + 1}, got {idx}")
        words.append(cols[1])
        heads.append(head)
        rels.append(cols[7].split(":")[0])
    flush(len(lines) + 1)
    return sentences


_UPOS = {"det": "DET", "nsubj": "NOUN", "dobj": "NOUN", "pobj": "NOUN", "attr": "NOUN",
         "prep": "ADP", "amod": "ADJ", "punct": "PUNCT", "root": "VERB", "cop": "AUX"}


def write_parses(path, sentences: Sequence[ParsedSentence]) -> None:
    out = []
    for s in sentences:
        for i, (w, h, r) in enumerate(zip(s.words, s.heads, s.relations), 1):
            out.append("\t".join([str(i), w, w.lower(), _UPOS.get(r, "X"), "_", "_", str(h), r, "_", "_"]))
        out.append("")
    Path(path).write_text("\n".join(out) + ("\n" if out else ""), encoding="utf-8")


# ---------------------------------------------------------------------------
# synthetic generators

NOUNS = [("dog", "dogs"), ("cat", "cats"), ("teacher", "teachers"), ("farmer", "farmers"),
         ("child", "children"), ("girl", "girls"), ("boy", "boys"), ("doctor", "doctors"),
         ("bird", "birds"), ("student", "students"), ("author", "authors"), ("baker", "bakers")]
INTRANSITIVE = [("runs", "run"), ("sleeps", "sleep"), ("laughs", "laugh"), ("waits", "wait"),
                ("sings", "sing"), ("smiles", "smile"), ("is happy", "are happy"), ("was tired", "were tired")]
TRANSITIVE = [("sees", "see"), ("likes", "like"), ("helps", "help"), ("knows", "know")]
PREPOSITIONS = ["near", "behind", "beside", "with"]
ADJECTIVES = ["old", "small", "tall", "young", "quiet"]
PHENOMENA = ("simple_agreement", "agreement_with_adjective", "agreement_across_pp",
             "agreement_across_relative_clause")


def _agreement_sentence(rng: random.Random, phenomenon: str) -> tuple[str, str]:
    """One (good, bad) pair; the two differ only in the main verb's number."""
    plural = rng.random() < 0.5
    noun = rng.choice(NOUNS)[plural]
    verb_sg, verb_pl = rng.choice(INTRANSITIVE)
    good_v, bad_v = (verb_pl, verb_sg) if plural else (verb_sg, verb_pl)
    if phenomenon == "simple_agreement":
        subject = f"the {noun}"
    elif phenomenon == "agreement_with_adjective":
        subject = f"the {rng.choice(ADJECTIVES)} {noun}"
    elif phenomenon == "agreement_across_pp":
        attractor = rng.choice(NOUNS)[rng.random() < 0.5]
        subject = f"the {noun} {rng.choice(PREPOSITIONS)} the {attractor}"
    elif phenomenon == "agreement_across_relative_clause":
        rc_verb = rng.choice(TRANSITIVE)[plural]
        obj = rng.choice(NOUNS)[rng.random() < 0.5]
        subject = f"the {noun} that {rc_verb} the {obj}"
    else:
        raise ValueError(f"unknown phenomenon {phenomenon!r}")
    subject = subject[0].upper() + subject[1:]
    return f"{subject} {good_v}.", f"{subject} {bad_v}."


def gen_agreement_pairs(seed: int, size: int) -> list[MinimalPairRecord]:
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = random.Random(seed)
    out = []
    for i in range(size):
        phen = PHENOMENA[i % len(PHENOMENA)]
        good, bad = _agreement_sentence(rng, phen)
        out.append(MinimalPairRecord(f"{phen}_{i:06d}", phen, good, bad))
    return out


def gen_agreement_corpus(seed: int, size: int) -> list[str]:
    """Grammatical sentences from the agreement grammar, for training."""
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = random.Random(seed)
    return [_agreement_sentence(rng, rng.choice(PHENOMENA))[0] for _ in range(size)]


# template parses: (word, head, relation); heads are 1-based within the template
def _parse_template(rng: random.Random) -> list[tuple[str, int, str]]:
    noun = lambda: rng.choice(NOUNS)[rng.random() < 0.5]
    det = lambda: rng.choice(["the", "a", "this", "my"])
    choice = rng.randrange(5)
    if choice == 0:  # The dog sees the cat .
        return [(det(), 2, "det"), (noun(), 3, "nsubj"), (rng.choice(TRANSITIVE)[0], 0, "root"),
                (det(), 5, "det"), (noun(), 3, "dobj"), (".", 3, "punct")]
    if choice == 1:  # The dog is a teacher .
        return [(det(), 2, "det"), (noun(), 3, "nsubj"), ("is", 0, "root"),
                ("a", 5, "det"), (noun(), 3, "attr"), (".", 3, "punct")]
    if choice == 2:  # The old dog sleeps near the cat .
        return [(det(), 3, "det"), (rng.choice(ADJECTIVES), 3, "amod"), (noun(), 4, "nsubj"),
                (rng.choice(INTRANSITIVE[:6])[0], 0, "root"), (rng.choice(PREPOSITIONS), 4, "prep"),
                (det(), 7, "det"), (noun(), 5, "pobj"), (".", 4, "punct")]
    if choice == 3:  # The dog sees the old cat with the bird .
        return [(det(), 2, "det"), (noun(), 3, "nsubj"), (rng.choice(TRANSITIVE)[0], 0, "root"),
                (det(), 6, "det"), (rng.choice(ADJECTIVES), 6, "amod"), (noun(), 3, "dobj"),
                (rng.choice(PREPOSITIONS), 3, "prep"), (det(), 9, "det"), (noun(), 7, "pobj"), (".", 3, "punct")]
    # The dog near the cat is a doctor .
    return [(det(), 2, "det"), (noun(), 6, "nsubj"), (rng.choice(PREPOSITIONS), 2, "prep"),
            (det(), 5, "det"), (noun(), 3, "pobj"), ("is", 0, "root"), ("a", 8, "det"),
            (noun(), 6, "attr"), (".", 6, "punct")]


def gen_parsed_corpus(seed: int, size: int) -> list[ParsedSentence]:
    if size < 1:
        raise ValueError("size must be >= 1")
    rng = random.Random(seed)
    out = []
    for _ in range(size):
        toks = _parse_template(rng)
        words = [w for w, _, _ in toks]
        words[0] = words[0].capitalize()
        out.append(ParsedSentence(words, [h for _, h, _ in toks], [r for _, _, r in toks]))
    return out


DEFAULT_PSYCH_COEFS = {
    "first_fixation": {"intercept": 180.0, "word_length": 4.0, "log_frequency": -3.0, "surprisal": 2.5},
    "gaze_duration": {"intercept": 210.0, "word_length": 9.0, "log_frequency": -5.0, "surprisal": 4.0},
    "self_paced_reading": {"intercept": 320.0, "word_length": 2.0, "log_frequency": -2.0, "surprisal": 6.0},
}


def gen_psych_measures(score_sentence, sentences: Sequence[str], freqs: WordFrequencies, seed: int,
                       noise_sd: float = 10.0, coefficients: dict | None = None) -> tuple[list[MeasureRow], dict]:
    """Word-level measures as a linear function of covariates and a reference model's surprisal.

    Returns the rows and the ground truth (coefficients and noise level).
    """
    if not sentences:
        raise ValueError("no sentences to generate measures for")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    coefs = coefficients or DEFAULT_PSYCH_COEFS
    rng = np.random.default_rng(seed)
    rows = []
    for s_idx, text in enumerate(sentences):
        scored = score_sentence(text)
        for w_idx, (word, surp) in enumerate(zip(scored.words, scored.word_surprisals)):
            for measure, c in coefs.items():
                value = (c["intercept"] + c["word_length"] * word_length(word)
                         + c["log_frequency"] * freqs.log_frequency(word) + c["surprisal"] * float(surp))
                if noise_sd:
                    value += rng.normal(0.0, noise_sd)
                rows.append(MeasureRow(f"s{s_idx:05d}", w_idx, word, measure, float(value)))
    return rows, {"coefficients": coefs, "noise_sd": noise_sd, "seed": seed}
