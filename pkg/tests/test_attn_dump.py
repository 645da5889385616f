import numpy as np
import pytest
import torch

from conftest import ALL_KINDS, tiny_model
from wmlm.attn_dump import DEFAULT_SENTENCE, attn_dump, collect_attention, read_matrix_csv, read_pgm, to_pixels, write_pgm
from wmlm.constraints import ConstraintSpec
from wmlm.errors import SentenceTooLong
from wmlm.scoring import Scorer
from wmlm.tokenizer import train_bpe


@pytest.fixture(scope="module")
def vocab():
    return train_bpe(DEFAULT_SENTENCE * 3, 300)


def scorer_for(spec, vocab, max_context=40):
    return Scorer(tiny_model(spec, vocab_size=vocab.size, max_context=max_context, dtype=torch.float32), vocab)


def test_pixels_map_zero_black_one_white():
    m = np.array([[1.0, 0.0], [0.5, 0.25]])
    px = to_pixels(m)
    assert px.tolist() == [[255, 0], [128, 64]]
    big = to_pixels(m, upscale=3)
    assert big.shape == (6, 6) and (big[:3, :3] == 255).all()
    with pytest.raises(ValueError):
        to_pixels(m, upscale=0)


def test_pgm_roundtrip(tmp_path):
    px = np.arange(12, dtype=np.uint8).reshape(3, 4) * 20
    write_pgm(tmp_path / "x.pgm", px)
    assert np.array_equal(read_pgm(tmp_path / "x.pgm"), px)
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")


@pytest.mark.parametrize("spec", ALL_KINDS, ids=str)
def test_dump_files_and_values(spec, vocab, tmp_path):
    sc = scorer_for(spec, vocab)
    dump = attn_dump(sc, DEFAULT_SENTENCE, tmp_path, upscale=2)
    L = len(dump.tokens)
    assert dump.tokens[0] == "<bos>"
    assert (tmp_path / "tokens.txt").read_text().splitlines() == dump.tokens
    for layer in range(2):
        for head in range(2):
            m = read_matrix_csv(tmp_path / f"layer{layer}_head{head}.csv")
            assert np.array_equal(m, dump.matrices[layer][head])
            assert m.shape == (L, L)
            assert np.abs(m.sum(1) - 1).max() <= 1e-6
            px = read_pgm(tmp_path / f"layer{layer}_head{head}.pgm")
            assert px.shape == (2 * L, 2 * L)


def test_fixed_window_band_is_exactly_zero(vocab, tmp_path):
    sc = scorer_for(ConstraintSpec.fixed_window(5), vocab)
    dump = attn_dump(sc, DEFAULT_SENTENCE, tmp_path)
    L = len(dump.tokens)
    i, j = np.indices((L, L))
    outside = (j > i) | (j < i - 4)
    for heads in dump.matrices:
        for m in heads:
            assert (m[outside] == 0).all()
            assert (m[~outside] > 0).all()
    px = read_pgm(tmp_path / "layer1_head0.pgm")
    assert (px[outside] == 0).all()


def test_without_bos(vocab):
    sc = scorer_for(ConstraintSpec.none(), vocab)
    dump = collect_attention(sc, "The trophy", bos=False)
    assert dump.tokens[0] != "<bos>"
    assert dump.matrices[0][0].shape[0] == len(vocab.encode("The trophy"))


def test_too_long_and_empty(vocab):
    sc = scorer_for(ConstraintSpec.none(), vocab, max_context=8)
    with pytest.raises(SentenceTooLong):
        collect_attention(sc, DEFAULT_SENTENCE)
    with pytest.raises(SentenceTooLong):
        collect_attention(sc, DEFAULT_SENTENCE, bos=False)
    with pytest.raises(ValueError):
        collect_attention(sc, "", bos=False)
