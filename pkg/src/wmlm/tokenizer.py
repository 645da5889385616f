"""Byte-level byte-pair encoding.

Text is first split into chunks (an optional leading space followed by a run
of letters, digits or other symbols; or whitespace), so merges never cross a
whitespace boundary and every token belongs to exactly one
whitespace-delimited word. Ids 0..255 are raw bytes, then BOS and PAD, then
one id per learned merge in training order.
"""

from __future__ import annotations

import collections
import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import FormatError

FORMAT_NAME = "wmlm-bpe"
FORMAT_VERSION = 1
N_BYTES = 256
SPECIALS = ("<bos>", "<pad>")

# letters (incl. all non-ASCII bytes), digits, other symbols, whitespace
_CHUNK_RE = re.compile(
    rb" ?[A-Za-z\x80-\xff]+| ?[0-9]+| ?[^\sA-Za-z0-9\x80-\xff]+|\s+(?!\S)|\s+"
)


def pretokenize(data: bytes) -> list[bytes]:
    return _CHUNK_RE.findall(data)


@dataclass(frozen=True)
class Vocab:
    merges: tuple[tuple[int, int], ...]
    bos_id: int = N_BYTES
    pad_id: int = N_BYTES + 1
    _ranks: dict = field(default=None, init=False, repr=False, compare=False)
    _bytes: tuple = field(default=None, init=False, repr=False, compare=False)
    _cache: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        first = N_BYTES + len(SPECIALS)
        table: list[bytes | None] = [bytes([b]) for b in range(N_BYTES)] + [None] * len(SPECIALS)
        ranks = {}
        for rank, (a, b) in enumerate(self.merges):
            new_id = first + rank
            if not (0 <= a < new_id and 0 <= b < new_id) or table[a] is None or table[b] is None:
                raise FormatError(f"merge {rank} ({a}, {b}) refers to an unknown or special id")
            if (a, b) in ranks:
                raise FormatError(f"duplicate merge ({a}, {b})")
            ranks[(a, b)] = rank
            table.append(table[a] + table[b])
        object.__setattr__(self, "_ranks", ranks)
        object.__setattr__(self, "_bytes", tuple(table))
        object.__setattr__(self, "_cache", {})

    @property
    def size(self) -> int:
        return N_BYTES + len(SPECIALS) + len(self.merges)

    def __len__(self) -> int:
        return self.size

    def token_bytes(self, token_id: int) -> bytes:
        """Byte string for a token; specials map to their display name."""
        if not 0 <= token_id < self.size:
            raise KeyError(f"unknown token id {token_id}")
        b = self._bytes[token_id]
        if b is None:
            return SPECIALS[token_id - N_BYTES].encode()
        return b

    # encoding -----------------------------------------------------------

    def _encode_chunk(self, chunk: bytes) -> tuple[int, ...]:
        hit = self._cache.get(chunk)
        if hit is not None:
            return hit
        ids = list(chunk)
        ranks = self._ranks
        first = N_BYTES + len(SPECIALS)
        while len(ids) > 1:
            best, best_rank = -1, None
            for pos in range(len(ids) - 1):
                r = ranks.get((ids[pos], ids[pos + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pos, r
            if best_rank is None:
                break
            pair = (ids[best], ids[best + 1])
            merged, i = [], 0
            while i < len(ids):
                if i < len(ids) - 1 and (ids[i], ids[i + 1]) == pair:
                    merged.append(first + best_rank)
                    i += 2
                else:
                    merged.append(ids[i])
                    i += 1
            ids = merged
        out = tuple(ids)
        if len(self._cache) < 100_000:
            self._cache[chunk] = out
        return out

    def encode(self, text: str | bytes) -> list[int]:
        data = text.encode("utf-8") if isinstance(text, str) else bytes(text)
        out: list[int] = []
        for chunk in pretokenize(data):
            out.extend(self._encode_chunk(chunk))
        return out

    def decode_bytes(self, ids) -> bytes:
        parts = []
        for t in ids:
            t = int(t)
            if not 0 <= t < self.size:
                raise KeyError(f"unknown token id {t}")
            b = self._bytes[t]
            if b is None:
                raise KeyError(f"special token id {t} has no text")
            parts.append(b)
        return b"".join(parts)

    def decode(self, ids) -> str:
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    # persistence --------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"{FORMAT_NAME} {FORMAT_VERSION} vocab_size={self.size}", "specials"]
        lines += [f"{name} {N_BYTES + i}" for i, name in enumerate(SPECIALS)]
        lines.append(f"merges {len(self.merges)}")
        lines += [f"{a} {b}" for a, b in self.merges]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def sha256(self) -> str:
        return hashlib.sha256(self.dumps().encode("utf-8")).hexdigest()

    @classmethod
    def loads(cls, text: str) -> "Vocab":
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()

        def fail(lineno, msg):
            raise FormatError(f"vocab line {lineno}: {msg}")

        if not lines:
            fail(1, "empty file")
        m = re.fullmatch(rf"{FORMAT_NAME} (\d+) vocab_size=(\d+)", lines[0])
        if not m:
            fail(1, f"bad header {lines[0]!r}")
        if int(m.group(1)) != FORMAT_VERSION:
            fail(1, f"unsupported version {m.group(1)}")
        vocab_size = int(m.group(2))
        if len(lines) < 2 + len(SPECIALS) + 1 or lines[1] != "specials":
            fail(2, "expected 'specials' section")
        for i, name in enumerate(SPECIALS):
            if lines[2 + i] != f"{name} {N_BYTES + i}":
                fail(3 + i, f"expected special {name!r} with id {N_BYTES + i}")
        pos = 2 + len(SPECIALS)
        m = re.fullmatch(r"merges (\d+)", lines[pos])
        if not m:
            fail(pos + 1, "expected 'merges <count>'")
        n = int(m.group(1))
        body = lines[pos + 1:]
        if len(body) != n:
            fail(pos + 2, f"declared {n} merges, found {len(body)}")
        merges = []
        for off, line in enumerate(body):
            mm = re.fullmatch(r"(\d+) (\d+)", line)
            if not mm:
                fail(pos + 2 + off, f"malformed merge {line!r}")
            merges.append((int(mm.group(1)), int(mm.group(2))))
        vocab = cls(tuple(merges))
        if vocab.size != vocab_size:
            fail(1, f"header vocab_size={vocab_size} but file defines {vocab.size} tokens")
        return vocab

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def train_bpe(corpus: str | bytes, vocab_size: int) -> Vocab:
    """Learn merges greedily by pair frequency.

    Ties between equally frequent pairs go to the pair whose byte strings
    compare lexicographically smallest. Training stops at ``vocab_size``
    tokens or when no pair occurs at least twice.
    """
    base = N_BYTES + len(SPECIALS)
    if vocab_size <= base:
        raise ValueError(f"vocab_size must exceed {base} (bytes + specials), got {vocab_size}")
    data = corpus.encode("utf-8") if isinstance(corpus, str) else bytes(corpus)
    if not data:
        raise ValueError("cannot train a tokenizer on an empty corpus")

    chunk_counts = collections.Counter(pretokenize(data))
    words = [list(c) for c in chunk_counts]
    freqs = list(chunk_counts.values())
    token_bytes: list[bytes] = [bytes([b]) for b in range(N_BYTES)] + [b""] * len(SPECIALS)

    pair_counts: collections.Counter = collections.Counter()
    where: dict[tuple[int, int], set[int]] = collections.defaultdict(set)
    for wi, (w, f) in enumerate(zip(words, freqs)):
        for pair in zip(w, w[1:]):
            pair_counts[pair] += f
            where[pair].add(wi)

    merges: list[tuple[int, int]] = []
    while base + len(merges) < vocab_size:
        best, best_key = None, None
        for pair, count in pair_counts.items():
            if count < 2:
                continue
            key = (-count, token_bytes[pair[0]], token_bytes[pair[1]])
            if best_key is None or key < best_key:
                best, best_key = pair, key
        if best is None:
            break
        new_id = base + len(merges)
        merges.append(best)
        token_bytes.append(token_bytes[best[0]] + token_bytes[best[1]])

        for wi in sorted(where.pop(best, ())):
            w, f = words[wi], freqs[wi]
            for pair in zip(w, w[1:]):
                pair_counts[pair] -= f
                if pair_counts[pair] <= 0:
                    del pair_counts[pair]
            merged, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and w[i] == best[0] and w[i + 1] == best[1]:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(w[i])
                    i += 1
            words[wi] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += f
                where[pair].add(wi)
        pair_counts.pop(best, None)
    return Vocab(tuple(merges))
