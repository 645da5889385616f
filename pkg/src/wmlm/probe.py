"""Structural distance probe, MST decoding and UUAS.

A linear map ``B`` (k x d) is trained so that squared distances between
projected word vectors approximate dependency-tree path lengths. Trees are
read back with a minimum spanning tree over the predicted distances and
scored by unlabeled, unrooted attachment (UUAS), overall and per relation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch

from .errors import FormatError

log = logging.getLogger(__name__)

REPORT_RELATIONS = ("nsubj", "dobj", "prep", "attr", "root")
PUNCT = "punct"


@dataclass
class ParsedSentence:
    words: list[str]
    heads: list[int]  # 1-based head per word, 0 = root
    relations: list[str]

    def __post_init__(self):
        n = len(self.words)
        if n == 0:
            raise FormatError("sentence has no words")
        if len(self.heads) != n or len(self.relations) != n:
            raise FormatError("words, heads and relations must have equal length")
        for i, h in enumerate(self.heads):
            if not 0 <= h <= n:
                raise FormatError(f"word {i + 1} has head {h} outside 0..{n}")
            if h == i + 1:
                raise FormatError(f"word {i + 1} is its own head")
        roots = [i for i, h in enumerate(self.heads) if h == 0]
        if len(roots) != 1:
            raise FormatError(f"expected exactly one root, found {len(roots)}")
        # every word must reach the root without revisiting a node
        for start in range(n):
            seen, v = set(), start
            while self.heads[v] != 0:
                if v in seen:
                    raise FormatError(f"head structure has a cycle through word {v + 1}")
                seen.add(v)
                v = self.heads[v] - 1

    def __len__(self) -> int:
        return len(self.words)

    @property
    def root(self) -> int:
        return self.heads.index(0)

    def edges(self) -> list[tuple[int, int, str]]:
        """Undirected gold edges as ``(min, max, relation of the dependent)``, 0-based."""
        out = []
        for i, h in enumerate(self.heads):
            if h:
                out.append((min(i, h - 1), max(i, h - 1), self.relations[i]))
        return out

    def distances(self) -> np.ndarray:
        return tree_distances(self)


def tree_distances(sent: ParsedSentence) -> np.ndarray:
    """Path lengths in the undirected tree, via depths and lowest common ancestors."""
    n = len(sent)
    parent = [h - 1 for h in sent.heads]  # -1 for the root
    depth = [0] * n
    for v in range(n):
        d, u = 0, v
        while parent[u] >= 0:
            u = parent[u]
            d += 1
        depth[v] = d
    out = np.zeros((n, n), dtype=np.int64)
    for u in range(n):
        for v in range(u + 1, n):
            a, b = u, v
            while depth[a] > depth[b]:
                a = parent[a]
            while depth[b] > depth[a]:
                b = parent[b]
            while a != b:
                a, b = parent[a], parent[b]
            out[u, v] = out[v, u] = depth[u] + depth[v] - 2 * depth[a]
    return out


# ---------------------------------------------------------------------------
# probe


def probe_predict(B, hiddens):
    """Squared projected distances ``|B (h_i - h_j)|^2`` for all pairs.

    Works on numpy arrays or torch tensors (differentiably in the latter case).
    """
    if hiddens.shape[-1] != B.shape[-1]:
        raise ValueError(f"hidden size {hiddens.shape[-1]} does not match probe input size {B.shape[-1]}")
    if torch.is_tensor(B):
        proj = hiddens @ B.T
        diff = proj.unsqueeze(-2) - proj.unsqueeze(-3)
        return (diff ** 2).sum(-1)
    proj = np.asarray(hiddens, dtype=np.float64) @ np.asarray(B, dtype=np.float64).T
    diff = proj[:, None, :] - proj[None, :, :]
    return (diff ** 2).sum(-1)


@dataclass
class DistanceProbe:
    B: np.ndarray
    layer: int = 0
    epochs_run: int = 0
    best_epoch: int = 0
    learning_rate: float = 1e-3
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)

    @property
    def k_probe(self) -> int:
        return self.B.shape[0]

    def predict(self, hiddens) -> np.ndarray:
        return probe_predict(self.B, hiddens)


def _sentence_loss(B: torch.Tensor, h: torch.Tensor, d_tree: torch.Tensor) -> torch.Tensor:
    n = h.shape[0]
    pairs = n * (n - 1) / 2
    if pairs == 0:
        return h.new_zeros(())
    pred = probe_predict(B, h)
    # symmetric matrices: the full sum counts every unordered pair twice
    return (pred - d_tree).abs().sum() / 2 / pairs


def _mean_loss(B, data) -> float:
    with torch.no_grad():
        return float(torch.stack([_sentence_loss(B, h, d) for h, d in data]).mean())


def train_probe(train: Sequence[tuple[np.ndarray, np.ndarray]], val: Sequence[tuple[np.ndarray, np.ndarray]],
                k_probe: int = 64, epochs: int = 30, lr: float = 1e-3, patience: int = 3, batch_size: int = 20,
                seed: int = 0, layer: int = 0) -> DistanceProbe:
    """Fit B by Adam on the L1 gap between predicted squared distance and tree distance.

    Each sentence contributes its mean over unordered word pairs. Training
    stops after ``patience`` epochs without validation improvement and the
    best-validation B is returned.
    """
    if len(train) < 2:
        raise ValueError("need at least two training sentences")
    if not val:
        raise ValueError("validation split is empty")
    d = train[0][0].shape[1]
    if k_probe > d:
        raise ValueError(f"k_probe={k_probe} exceeds hidden size {d}")
    to_t = lambda data: [(torch.as_tensor(h, dtype=torch.float64), torch.as_tensor(t, dtype=torch.float64)) for h, t in data]
    tr, va = to_t(train), to_t(val)

    gen = torch.Generator().manual_seed(seed)
    B = torch.nn.Parameter(torch.empty(k_probe, d, dtype=torch.float64).uniform_(-0.05, 0.05, generator=gen))
    opt = torch.optim.Adam([B], lr=lr)
    best_val, best_B, best_epoch, stale = math.inf, B.detach().clone(), 0, 0
    probe = DistanceProbe(B=np.zeros((k_probe, d)), layer=layer, learning_rate=lr)

    for epoch in range(1, epochs + 1):
        order = torch.randperm(len(tr), generator=gen).tolist()
        running = []
        for start in range(0, len(order), batch_size):
            opt.zero_grad()
            loss = torch.stack([_sentence_loss(B, *tr[i]) for i in order[start:start + batch_size]]).mean()
            if not torch.isfinite(loss):
                raise FloatingPointError(f"probe training diverged at epoch {epoch}")
            loss.backward()
            opt.step()
            running.append(loss.item())
        probe.train_losses.append(float(np.mean(running)))
        val_loss = _mean_loss(B, va)
        probe.val_losses.append(val_loss)
        probe.epochs_run = epoch
        if val_loss < best_val:
            best_val, best_B, best_epoch, stale = val_loss, B.detach().clone(), epoch, 0
        else:
            stale += 1
            if stale >= patience:
                log.info("probe early stop at epoch %d (best %d)", epoch, best_epoch)
                break
    probe.B = best_B.numpy()
    probe.best_epoch = best_epoch
    return probe


# ---------------------------------------------------------------------------
# decoding and scoring


class _DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[max(ra, rb)] = min(ra, rb)
        return True


def mst_decode(dist) -> set[tuple[int, int]]:
    """Minimum spanning tree of the complete graph weighted by ``dist``.

    Kruskal over edges sorted by ``(weight, u, v)`` with ``u < v``, so ties go
    to the lexicographically smallest edge.
    """
    dist = np.asarray(dist, dtype=np.float64)
    n = dist.shape[0]
    if dist.shape != (n, n):
        raise ValueError("distance matrix must be square")
    if n < 2:
        raise ValueError("need at least two words to decode a tree")
    iu, ju = np.triu_indices(n, 1)
    order = np.lexsort((ju, iu, dist[iu, ju]))
    ds, edges = _DisjointSet(n), set()
    for idx in order:
        u, v = int(iu[idx]), int(ju[idx])
        if ds.union(u, v):
            edges.add((u, v))
            if len(edges) == n - 1:
                break
    return edges


def _kept(sent: ParsedSentence, exclude_punct: bool) -> list[int]:
    if not exclude_punct:
        return list(range(len(sent)))
    return [i for i, r in enumerate(sent.relations) if r != PUNCT]


def gold_edges(sent: ParsedSentence, relation: str | None = None, exclude_punct: bool = True) -> set[tuple[int, int]]:
    """Gold undirected edges, optionally restricted to one relation.

    ``root`` selects the edges incident to the root word (UUAS is unrooted,
    so the root attachment itself is not an edge).
    """
    kept = set(_kept(sent, exclude_punct))
    out = set()
    for u, v, rel in sent.edges():
        if u not in kept or v not in kept:
            continue
        if relation is None:
            out.add((u, v))
        elif relation == "root":
            if sent.root in (u, v):
                out.add((u, v))
        elif rel == relation:
            out.add((u, v))
    return out


def decode_sentence(dist, sent: ParsedSentence, exclude_punct: bool = True) -> set[tuple[int, int]]:
    """MST over the non-punctuation words, edges in original word indices."""
    kept = _kept(sent, exclude_punct)
    if len(kept) < 2:
        return set()
    sub = np.asarray(dist)[np.ix_(kept, kept)]
    return {(kept[a], kept[b]) for a, b in mst_decode(sub)}


def uuas_counts(pred: set[tuple[int, int]], gold: ParsedSentence, relation: str | None = None,
                exclude_punct: bool = True) -> tuple[int, int]:
    for u, v in pred:
        if not (0 <= u < len(gold) and 0 <= v < len(gold)):
            raise ValueError(f"predicted edge ({u}, {v}) is outside the sentence's {len(gold)} words")
    want = gold_edges(gold, relation, exclude_punct)
    got = {(min(u, v), max(u, v)) for u, v in pred}
    return len(want & got), len(want)


def uuas(pred: set[tuple[int, int]], gold: ParsedSentence, relation: str | None = None,
         exclude_punct: bool = True) -> float:
    """Fraction of gold edges recovered; NaN when the filter leaves no gold edges."""
    hit, total = uuas_counts(pred, gold, relation, exclude_punct)
    return hit / total if total else float("nan")


def corpus_uuas(preds: Sequence[set], golds: Sequence[ParsedSentence], relations=REPORT_RELATIONS,
                exclude_punct: bool = True) -> dict[str, tuple[float, int]]:
    """Micro-averaged UUAS (score, number of gold edges) overall and per relation."""
    out = {}
    for rel in (None,) + tuple(relations):
        hit = total = 0
        for p, g in zip(preds, golds):
            h, t = uuas_counts(p, g, rel, exclude_punct)
            hit += h
            total += t
        out[rel or "all"] = (hit / total if total else float("nan"), total)
    return out


def random_tree_baseline(golds: Sequence[ParsedSentence], exclude_punct: bool = True) -> float:
    """Expected UUAS of a uniformly random spanning tree: each gold edge survives with probability 2/n."""
    hit = total = 0.0
    for g in golds:
        n = len(_kept(g, exclude_punct))
        t = len(gold_edges(g, None, exclude_punct))
        if n >= 2:
            hit += t * 2.0 / n
        total += t
    return hit / total if total else float("nan")


# ---------------------------------------------------------------------------
# hidden states from a language model


def word_hiddens(scorer, words: Sequence[str]) -> list[np.ndarray]:
    """Per-layer word vectors (layer 0 = embeddings), each word the mean of its tokens' states."""
    from .scoring import align_tokens_to_words

    text = " ".join(words)
    ids = scorer.input_ids(text)
    with torch.no_grad():
        rec = scorer.model(torch.tensor(ids, dtype=torch.long), capture_hidden=True)
    aligned, owner = align_tokens_to_words(scorer.vocab, ids[1:], text)
    if len(aligned) != len(words):
        raise ValueError(f"words {list(words)} do not survive whitespace splitting")
    owner = np.asarray(owner)
    out = []
    for h in rec.hiddens:
        h = h[1:].double().numpy()  # drop BOS
        out.append(np.stack([h[owner == w].mean(0) for w in range(len(words))]))
    return out


@dataclass
class SweepRow:
    layer: int
    relation: str
    uuas: float
    n_gold_edges: int


def layer_sweep(scorer, train: Sequence[ParsedSentence], val: Sequence[ParsedSentence],
                test: Sequence[ParsedSentence], k_probe: int = 64, epochs: int = 30, lr: float = 1e-3,
                seed: int = 0, exclude_punct: bool = True) -> list[SweepRow]:
    """Train one probe per layer on ``train`` and report test UUAS per relation."""
    def collect(sents):
        return [word_hiddens(scorer, s.words) for s in sents]

    h_train, h_val, h_test = collect(train), collect(val), collect(test)
    n_layers = scorer.model.config.n_layers + 1
    k = min(k_probe, scorer.model.config.d_model)
    if k < k_probe:
        log.warning("k_probe=%d exceeds d_model=%d; using k_probe=%d", k_probe, k, k)
    rows = []
    for layer in range(n_layers):
        tr = [(h[layer], s.distances()) for h, s in zip(h_train, train)]
        va = [(h[layer], s.distances()) for h, s in zip(h_val, val)]
        probe = train_probe(tr, va, k_probe=k, epochs=epochs, lr=lr, seed=seed, layer=layer)
        preds = [decode_sentence(probe.predict(h[layer]), s, exclude_punct) for h, s in zip(h_test, test)]
        for rel, (score, n) in corpus_uuas(preds, test, exclude_punct=exclude_punct).items():
            rows.append(SweepRow(layer, rel, score, n))
    return rows
