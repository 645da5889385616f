import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import tiny_model
from wmlm.constraints import ConstraintSpec
from wmlm.errors import SentenceTooLong
from wmlm.model import ModelConfig, TransformerLM
from wmlm.scoring import LN2, Scorer, align_tokens_to_words, sentence_logprob, word_surprisals
from wmlm.tokenizer import Vocab, train_bpe

TEXT = "the cat sat on the mat. the dog sat on the cat. a bird saw the dog."


@pytest.fixture(scope="module")
def vocab():
    return train_bpe(TEXT, 290)


@pytest.fixture(scope="module")
def scorer(vocab):
    model = tiny_model(ConstraintSpec.logistic(), vocab_size=vocab.size, d_model=16, max_context=40, seed=2)
    return Scorer(model, vocab)


def uniform_scorer(vocab, max_context=32):
    model = TransformerLM(ModelConfig(vocab_size=vocab.size, d_model=8, n_heads=2, n_layers=1,
                                      max_context=max_context), seed=0)
    with torch.no_grad():
        model.tok_emb.zero_()  # tied head: every logit is 0
    return Scorer(model, vocab)


def vocab_of_size(size):
    high = range(0x80, 0x100)
    merges = [(a, b) for a in high for b in high][: size - 258]
    return Vocab(tuple(merges))


def test_uniform_model_logprob(vocab):
    sc = uniform_scorer(vocab)
    text = "the cat sat"
    n = len(vocab.encode(text))
    assert sentence_logprob(sc, text) == pytest.approx(-n * math.log(vocab.size), abs=1e-9)


def test_uniform_two_subwords_is_twenty_bits():
    v = vocab_of_size(1024)
    assert v.size == 1024
    sc = uniform_scorer(v)
    assert len(v.encode("hi")) == 2
    scored = word_surprisals(sc, "hi")
    assert scored.words == ["hi"]
    assert scored.word_surprisals[0] == pytest.approx(20.0, abs=1e-9)


def test_single_word_equals_total(scorer):
    s = word_surprisals(scorer, "cat.")
    assert len(s.words) == 1
    assert s.word_surprisals[0] == pytest.approx(s.total_surprisal, abs=1e-12)


def test_word_sums_subwords(scorer, vocab):
    s = word_surprisals(scorer, "the zzyzx sat")
    words, owner = align_tokens_to_words(vocab, s.token_ids, "the zzyzx sat")
    idx = [k for k, w in enumerate(owner) if w == 1]
    assert len(idx) >= 3
    assert s.word_surprisals[1] == pytest.approx(s.token_surprisals[idx].sum(), abs=1e-12)


def test_identical_sentences_identical_scores(scorer):
    assert sentence_logprob(scorer, "the cat sat.") == sentence_logprob(scorer, "the cat sat.")


def test_appending_decreases_logprob(scorer):
    base = sentence_logprob(scorer, "the cat")
    for extra in (" sat", ".", " zz", "s"):
        assert sentence_logprob(scorer, "the cat" + extra) < base


def test_chain_rule_against_prefix_forwards(vocab):
    model = tiny_model(ConstraintSpec.primacy_recency(), vocab_size=vocab.size, max_context=40, seed=5)
    sc = Scorer(model, vocab)
    text = "a bird saw the cat."
    ids = [vocab.bos_id] + vocab.encode(text)
    prob = 1.0
    with torch.no_grad():
        for k in range(1, len(ids)):
            logits = model(torch.tensor(ids[:k])).logits[-1]
            prob *= torch.softmax(logits, -1)[ids[k]].item()
    assert math.exp(sentence_logprob(sc, text)) == pytest.approx(prob, rel=1e-9)


def test_logprob_surprisal_relation(scorer):
    s = word_surprisals(scorer, "the dog saw a bird.")
    assert s.logprob == pytest.approx(-LN2 * s.token_surprisals.sum(), abs=1e-12)
    assert (s.token_surprisals >= 0).all()
    assert s.logprob <= 0


def test_first_token_is_scored(scorer, vocab):
    ids, lp = scorer.token_logprobs("cat")
    assert ids == vocab.encode("cat")
    assert len(lp) == len(ids)


def test_empty_and_too_long(scorer):
    with pytest.raises(ValueError):
        sentence_logprob(scorer, "")
    with pytest.raises(ValueError):
        sentence_logprob(scorer, "   ")
    with pytest.raises(SentenceTooLong):
        sentence_logprob(scorer, "qz " * 40)


def test_vocab_size_mismatch_rejected(vocab):
    model = TransformerLM(ModelConfig(vocab_size=vocab.size + 1, d_model=8, n_heads=2, n_layers=1))
    with pytest.raises(ValueError):
        Scorer(model, vocab)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.text(alphabet="abcdetx.,!'é", min_size=1, max_size=6), min_size=1, max_size=6),
       st.sampled_from([" ", "  ", "\t"]))
def test_alignment_partitions_tokens(words, sep):
    v = train_bpe(TEXT, 290)
    text = sep.join(words)
    ids = v.encode(text)
    got_words, owner = align_tokens_to_words(v, ids, text)
    assert got_words == text.split()
    assert owner == sorted(owner)
    for w in range(len(got_words)):
        piece = v.decode_bytes([t for t, o in zip(ids, owner) if o == w])
        assert piece.strip() == got_words[w].encode()


def test_partition_invariant_random_sentences(scorer):
    rng = np.random.default_rng(0)
    pool = TEXT.replace(".", " .").split() + ["zebra", "qq", "x'y"]
    for _ in range(50):
        text = " ".join(rng.choice(pool, size=rng.integers(1, 6)))
        s = word_surprisals(scorer, text)
        assert abs(s.word_surprisals.sum() - s.token_surprisals.sum()) <= 1e-9
