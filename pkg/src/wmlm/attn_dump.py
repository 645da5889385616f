"""Export per-head attention matrices as CSV files and grayscale PGM heatmaps."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import SentenceTooLong

DEFAULT_SENTENCE = "The trophy would not fit in the brown suitcase because it was too small."


@dataclass
class AttentionDump:
    sentence: str
    tokens: list[str]
    matrices: list[list[np.ndarray]]  # [layer][head] -> (L, L) row-stochastic


def collect_attention(scorer, sentence: str, bos: bool = True) -> AttentionDump:
    """Post-constraint attention of every head; ``bos`` prepends the BOS position as in training."""
    if bos:
        ids = scorer.input_ids(sentence)
    else:
        ids = scorer.vocab.encode(sentence)
        if not ids:
            raise ValueError("cannot dump attention for an empty sentence")
        if len(ids) > scorer.model.config.max_context:
            raise SentenceTooLong(f"sentence needs {len(ids)} positions, max_context is {scorer.model.config.max_context}")
    with torch.no_grad():
        rec = scorer.model(torch.tensor(ids, dtype=torch.long), capture_attention=True)
    tokens = [scorer.vocab.token_bytes(t).decode("utf-8", errors="replace") for t in ids]
    mats = [[a[h].double().numpy() for h in range(a.shape[0])] for a in rec.attentions]
    return AttentionDump(sentence, tokens, mats)


def to_pixels(matrix: np.ndarray, upscale: int = 1) -> np.ndarray:
    """0 -> black, 1 -> white, one pixel per cell (times ``upscale``)."""
    if upscale < 1:
        raise ValueError("upscale must be >= 1")
    px = np.clip(np.rint(np.asarray(matrix) * 255.0), 0, 255).astype(np.uint8)
    if upscale > 1:
        px = np.kron(px, np.ones((upscale, upscale), dtype=np.uint8))
    return px


def write_pgm(path, pixels: np.ndarray) -> None:
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5" or int(parts[3]) != 255:
        raise ValueError(f"{path}: not an 8-bit binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4], dtype=np.uint8, count=w * h).reshape(h, w)


def write_matrix_csv(path, matrix: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = [line.split(",") for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
    return np.array([[float(x) for x in r] for r in rows], dtype=np.float64)


def attn_dump(scorer, sentence: str, out_dir, upscale: int = 1, bos: bool = True) -> AttentionDump:
    """Write ``layer{l}_head{h}.csv`` / ``.pgm`` per head plus ``tokens.txt`` into ``out_dir``."""
    dump = collect_attention(scorer, sentence, bos=bos)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tokens.txt").write_text("".join(t.replace("\n", "\\n") + "\n" for t in dump.tokens), encoding="utf-8")
    for layer, heads in enumerate(dump.matrices):
        for head, m in enumerate(heads):
            stem = out / f"layer{layer}_head{head}"
            write_matrix_csv(stem.with_suffix(".csv"), m)
            write_pgm(stem.with_suffix(".pgm"), to_pixels(m, upscale))
    return dump
