import json

import numpy as np
import pytest

from wmlm.data import (
    PHENOMENA,
    gen_agreement_corpus,
    gen_agreement_pairs,
    gen_parsed_corpus,
    read_corpus,
    read_measures,
    read_pairs,
    read_parses,
    write_measures,
    write_pairs,
    write_parses,
)
from wmlm.errors import FormatError
from wmlm.evaluation import MeasureRow


def test_read_corpus_skips_blank_and_rejects_bad_utf8(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("one\n\n  \ntwo\r\n", encoding="utf-8")
    assert read_corpus(p) == ["one", "two"]
    p.write_bytes(b"ok\n\xff\xfe\n")
    with pytest.raises(FormatError, match=":2:"):
        read_corpus(p)


@pytest.mark.parametrize("seed", range(50))
def test_pairs_roundtrip_and_shape(seed, tmp_path):
    pairs = gen_agreement_pairs(seed, 20)
    p = tmp_path / "pairs.jsonl"
    write_pairs(p, pairs)
    assert read_pairs(p) == pairs
    assert len({r.uid for r in pairs}) == 20
    for r in pairs:
        assert r.phenomenon in PHENOMENA
        good, bad = r.sentence_good.split(), r.sentence_bad.split()
        assert len(good) == len(bad)
        assert sum(a != b for a, b in zip(good, bad)) in (1, 2)  # "is happy" / "are happy"
        assert r.sentence_good[0].isupper() and r.sentence_good.endswith(".")


def test_generators_deterministic():
    assert gen_agreement_pairs(3, 40) == gen_agreement_pairs(3, 40)
    assert gen_agreement_pairs(3, 40) != gen_agreement_pairs(4, 40)
    assert gen_agreement_corpus(1, 10) == gen_agreement_corpus(1, 10)
    with pytest.raises(ValueError):
        gen_agreement_pairs(0, 0)


def test_phenomena_balanced():
    pairs = gen_agreement_pairs(0, 400)
    counts = {p: sum(r.phenomenon == p for r in pairs) for p in PHENOMENA}
    assert set(counts.values()) == {100}


@pytest.mark.parametrize("line,msg", [
    ("{not json", "invalid JSON"),
    ('["a"]', "JSON object"),
    ('{"uid": "a", "phenomenon": "p", "sentence_good": "x"}', "missing"),
    ('{"uid": 1, "phenomenon": "p", "sentence_good": "x", "sentence_bad": "y"}', "strings"),
    ('{"uid": "a", "phenomenon": "p", "sentence_good": "", "sentence_bad": "y"}', "empty"),
    ("", "blank"),
])
def test_read_pairs_errors(tmp_path, line, msg):
    p = tmp_path / "p.jsonl"
    good = json.dumps({"uid": "z", "phenomenon": "p", "sentence_good": "a", "sentence_bad": "b"})
    p.write_text(good + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(FormatError, match=":2:"):
        read_pairs(p)


def test_read_pairs_duplicate_uid_and_extra_fields(tmp_path):
    p = tmp_path / "p.jsonl"
    rec = {"uid": "a", "phenomenon": "p", "sentence_good": "x", "sentence_bad": "y", "extra": 1}
    p.write_text(json.dumps(rec) + "\n", encoding="utf-8")
    assert len(read_pairs(p)) == 1
    p.write_text((json.dumps(rec) + "\n") * 2, encoding="utf-8")
    with pytest.raises(FormatError, match="duplicate"):
        read_pairs(p)


def test_measures_roundtrip(tmp_path):
    rows = [MeasureRow("s1", 0, "Hello,", "gaze", 212.125), MeasureRow("s1", 1, 'say "hi"', "gaze", 0.1 + 0.2)]
    p = tmp_path / "m.csv"
    write_measures(p, rows)
    assert read_measures(p) == rows
    assert p.read_text().splitlines()[0] == "sentence_id,word_index,word,measure,value"


@pytest.mark.parametrize("body,msg", [
    ("a,b,c\n", "header"),
    ("sentence_id,word_index,word,measure,value\ns,0,w,m\n", "5 fields"),
    ("sentence_id,word_index,word,measure,value\ns,x,w,m,1\n", "integer"),
    ("sentence_id,word_index,word,measure,value\ns,0,w,m,nan\n", "finite"),
    ("sentence_id,word_index,word,measure,value\ns,-1,w,m,1\n", "negative"),
    ("sentence_id,word_index,word,measure,value\ns,0,w,m,1\ns,0,w,m,2\n", "duplicate"),
])
def test_measures_errors(tmp_path, body, msg):
    p = tmp_path / "m.csv"
    p.write_text(body, encoding="utf-8")
    with pytest.raises(FormatError, match=msg):
        read_measures(p)


@pytest.mark.parametrize("seed", range(50))
def test_parses_roundtrip(seed, tmp_path):
    sents = gen_parsed_corpus(seed, 10)
    p = tmp_path / "t.conllu"
    write_parses(p, sents)
    assert read_parses(p) == sents
    for s in sents:
        assert s.relations.count("root") == 1
        assert s.relations[-1] == "punct"


def test_read_parses_skips_ranges_and_subtypes(tmp_path):
    text = "\n".join([
        "# sent_id = 1",
        "1-2\tdon't\t_\t_\t_\t_\t_\t_\t_\t_",
        "1\tdo\t_\tAUX\t_\t_\t3\taux\t_\t_",
        "2\tn't\t_\tPART\t_\t_\t3\tadvmod\t_\t_",
        "3\tgo\t_\tVERB\t_\t_\t0\troot\t_\t_",
        "3.1\tx\t_\t_\t_\t_\t_\t_\t_\t_",
        "4\tthere\t_\tADV\t_\t_\t3\tadvmod:loc\t_\t_",
        "",
    ])
    p = tmp_path / "t.conllu"
    p.write_text(text, encoding="utf-8")
    (s,) = read_parses(p)
    assert s.words == ["do", "n't", "go", "there"]
    assert s.relations == ["aux", "advmod", "root", "advmod"]


@pytest.mark.parametrize("lines,msg", [
    (["1\ta\t_\t_\t_\t_\t0\troot\t_"], "10 tab-separated"),
    (["1\ta\t_\t_\t_\t_\tx\troot\t_\t_"], "integers"),
    (["2\ta\t_\t_\t_\t_\t0\troot\t_\t_"], "expected token index 1"),
    (["1\ta\t_\t_\t_\t_\t0\troot\t_\t_", "2\tb\t_\t_\t_\t_\t0\troot\t_\t_"], "one root"),
    (["1\ta\t_\t_\t_\t_\t2\tdep\t_\t_", "2\tb\t_\t_\t_\t_\t1\tdep\t_\t_"], "root"),
])
def test_read_parses_errors(tmp_path, lines, msg):
    p = tmp_path / "t.conllu"
    p.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(FormatError, match=msg):
        read_parses(p)
