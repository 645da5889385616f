"""Command-line entry point.

Exit codes: 0 success, 1 user error (bad flags, missing or malformed input),
2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from . import data as datamod
from .attn_dump import DEFAULT_SENTENCE, attn_dump
from .checkpoint import load_checkpoint
from .config import Key, parse_bool, read_config_file, resolve
from .constraints import ConstraintSpec
from .errors import ConfigError, SentenceTooLong, WmlmError
from .evaluation import WordFrequencies, aggregate_delta, build_regression_datasets, delta_loglik, eval_minimal_pairs
from .model import ModelConfig
from .probe import layer_sweep
from .scoring import Scorer
from .tokenizer import Vocab, train_bpe
from .trainer import TrainConfig, tokenize_corpus, train

log = logging.getLogger("wmlm")

_MODEL_KEYS = [
    Key("n_layers", int, 2), Key("d_model", int, 64), Key("n_heads", int, 4), Key("max_context", int, 64),
    Key("constraint", str, "none", "constraint in text form, e.g. fixed_window:W=5"),
    Key("tied_head", parse_bool, True),
]
_TRAIN_KEYS = [
    Key("learning_rate", float, 5e-5), Key("weight_decay", float, 0.01), Key("batch_size", int, 64),
    Key("grad_clip", float, 1.0), Key("epochs", int, 5), Key("seed", int, 0), Key("sequence_length", int, 64),
    Key("adam_beta1", float, 0.9), Key("adam_beta2", float, 0.999), Key("adam_epsilon", float, 1e-8),
    Key("max_steps", int, 0), Key("checkpoint_every", int, 0),
]
_LM_KEYS = [
    Key("checkpoint", str, help="checkpoint file"),
    Key("tokenizer", str, "", "tokenizer file (default: the path recorded in the checkpoint)"),
]

SCHEMAS: dict[str, tuple[str, list[Key]]] = {
    "tok-train": ("train a byte-level BPE tokenizer", [
        Key("corpus", str), Key("vocab_size", int, 2000), Key("out", str)]),
    "train": ("train a language model from scratch", [
        Key("corpus", str), Key("tokenizer", str), Key("out", str, help="checkpoint path"),
        Key("log", str, "", "loss log (default: <out>.log)")] + _MODEL_KEYS + _TRAIN_KEYS),
    "score": ("word-level surprisal for newline-delimited sentences", _LM_KEYS + [
        Key("input", str), Key("output", str, "-")]),
    "eval-blimp": ("minimal-pair accuracy per phenomenon", _LM_KEYS + [
        Key("pairs", str), Key("output", str, "-")]),
    "eval-psycho": ("Delta log-likelihood of surprisal per psychometric measure", _LM_KEYS + [
        Key("measures", str), Key("freq_corpus", str), Key("output", str, "-"),
        Key("exclude_first", parse_bool, False), Key("exclude_last", parse_bool, False)]),
    "probe": ("per-layer structural probe UUAS", _LM_KEYS + [
        Key("parses", str, help="training parses, or all parses when no dev/test files are given"),
        Key("dev_parses", str, ""), Key("test_parses", str, ""),
        Key("k_probe", int, 64), Key("epochs", int, 30), Key("learning_rate", float, 1e-3),
        Key("seed", int, 0), Key("include_punct", parse_bool, False), Key("output", str, "-")]),
    "attn-dump": ("write attention matrices and heatmaps", _LM_KEYS + [
        Key("sentence", str, DEFAULT_SENTENCE), Key("out_dir", str), Key("upscale", int, 1),
        Key("bos", parse_bool, True)]),
    "gen-synth": ("generate synthetic datasets", [
        Key("kind", str, help="agreement-pairs | agreement-corpus | psych-measures | parsed-corpus"),
        Key("seed", int, 0), Key("size", int, 500), Key("out", str),
        Key("checkpoint", str, "", "psych-measures: reference model"), Key("tokenizer", str, ""),
        Key("freq_corpus", str, "", "psych-measures: corpus for word frequencies"),
        Key("noise_sd", float, 10.0)]),
}


class UsageError(WmlmError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="wmlm", description="Working-memory-constrained language models")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    for name, (help_text, schema) in SCHEMAS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value file; flags override it")
        for key in schema:
            default = "required" if key.required else repr(key.default)
            p.add_argument(key.flag, dest=key.name, default=None, metavar=key.name.upper(),
                           help=f"{key.help} (default: {default})".strip())
    return parser


def _open_out(path: str):
    return sys.stdout if path in ("", "-") else open(path, "w", encoding="utf-8", newline="\n")


def _load_scorer(cfg) -> Scorer:
    ckpt = load_checkpoint(cfg["checkpoint"])
    tok_path = cfg.get("tokenizer") or ckpt.tokenizer_path
    if not tok_path:
        raise ConfigError("no tokenizer given and none recorded in the checkpoint (--tokenizer)")
    return Scorer.from_checkpoint(ckpt, Vocab.load(tok_path))


# ---------------------------------------------------------------------------
# subcommands


def cmd_tok_train(cfg):
    corpus = "\n".join(datamod.read_corpus(cfg["corpus"]))
    vocab = train_bpe(corpus, cfg["vocab_size"])
    vocab.save(cfg["out"])
    print(f"tokenizer with {vocab.size} tokens ({len(vocab.merges)} merges) -> {cfg['out']}")


def cmd_train(cfg):
    vocab = Vocab.load(cfg["tokenizer"])
    stream = tokenize_corpus(datamod.read_corpus(cfg["corpus"]), vocab)
    mc = ModelConfig(vocab_size=vocab.size, n_layers=cfg["n_layers"], d_model=cfg["d_model"], n_heads=cfg["n_heads"],
                     max_context=cfg["max_context"], constraint=ConstraintSpec.parse(cfg["constraint"]),
                     tied_head=cfg["tied_head"])
    tc = TrainConfig(**{k.name: cfg[k.name] for k in _TRAIN_KEYS})
    log_path = cfg["log"] or cfg["out"] + ".log"
    Path(log_path).write_text("")

    def progress(step, epoch, loss):
        if step % 100 == 0:
            log.info("step %d epoch %d loss %.4f", step, epoch, loss)

    result = train(stream, mc, tc, checkpoint_path=cfg["out"], log_path=log_path,
                   tokenizer_sha256=vocab.sha256(), tokenizer_path=str(Path(cfg["tokenizer"]).resolve()),
                   on_step=progress)
    final = result.losses[-1] if result.losses else float("nan")
    print(f"trained {result.steps} steps, final loss {final:.4f} nats/token -> {cfg['out']}")


def cmd_score(cfg):
    scorer = _load_scorer(cfg)
    lines = [l for l in Path(cfg["input"]).read_text(encoding="utf-8").splitlines()]
    out = _open_out(cfg["output"])
    try:
        out.write("sentence_index\tword_index\tword\tsurprisal_bits\n")
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                s = scorer.score(line)
            except SentenceTooLong as exc:
                print(f"sentence {i}: {exc}", file=sys.stderr)
                out.write(f"#skipped\t{i}\ttoo long\n")
                continue
            for j, (w, bits) in enumerate(zip(s.words, s.word_surprisals)):
                out.write(f"{i}\t{j}\t{w}\t{bits:.6f}\n")
            out.write(f"#summary\t{i}\tlogprob_nats={s.logprob:.6f}\tsurprisal_bits={s.total_surprisal:.6f}"
                      f"\tn_words={len(s.words)}\tn_tokens={len(s.token_ids)}\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_eval_blimp(cfg):
    scorer = _load_scorer(cfg)
    records = datamod.read_pairs(cfg["pairs"])
    res = eval_minimal_pairs(scorer.logprob, records)
    out = _open_out(cfg["output"])
    try:
        out.write("phenomenon,correct,total,accuracy\n")
        for phen, c, n, acc in res.rows():
            out.write(f"{phen},{c},{n},{acc:.6f}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if cfg["output"] not in ("", "-"):
        print(f"overall accuracy {res.overall:.4f} on {res.n_scored} pairs ({len(res.excluded)} excluded)")
    for uid, reason in res.excluded:
        print(f"excluded {uid}: {reason}", file=sys.stderr)


def cmd_eval_psycho(cfg):
    scorer = _load_scorer(cfg)
    rows = datamod.read_measures(cfg["measures"])
    freqs = WordFrequencies.from_lines(datamod.read_corpus(cfg["freq_corpus"]))
    datasets = build_regression_datasets(rows, scorer.score, freqs, cfg["exclude_first"], cfg["exclude_last"])
    results = [delta_loglik(d) for d in datasets.values()]
    mean, _ = aggregate_delta(results)
    out = _open_out(cfg["output"])
    try:
        out.write("measure,n,delta_loglik,delta_loglik_per_1000,surprisal_coef\n")
        for r in results:
            out.write(f"{r.measure},{r.n},{r.delta:.6f},{r.per_1000:.6f},{r.surprisal_coef:.6f}\n")
        out.write(f"mean,{sum(r.n for r in results)},{mean:.6f},,\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if cfg["output"] not in ("", "-"):
        print(f"mean Delta log-likelihood {mean:.4f} over {len(results)} measures")


def cmd_probe(cfg):
    scorer = _load_scorer(cfg)
    parses = datamod.read_parses(cfg["parses"])
    if cfg["dev_parses"] or cfg["test_parses"]:
        if not (cfg["dev_parses"] and cfg["test_parses"]):
            raise ConfigError("give both --dev-parses and --test-parses, or neither")
        train_s, dev_s, test_s = parses, datamod.read_parses(cfg["dev_parses"]), datamod.read_parses(cfg["test_parses"])
    else:
        n = len(parses)
        a, b = int(n * 0.8), int(n * 0.9)
        train_s, dev_s, test_s = parses[:a], parses[a:b], parses[b:]
    if len(train_s) < 2 or not dev_s or not test_s:
        raise ConfigError("not enough parsed sentences for train/dev/test splits")
    rows = layer_sweep(scorer, train_s, dev_s, test_s, k_probe=cfg["k_probe"], epochs=cfg["epochs"],
                       lr=cfg["learning_rate"], seed=cfg["seed"], exclude_punct=not cfg["include_punct"])
    out = _open_out(cfg["output"])
    try:
        out.write("layer,relation,uuas,n_gold_edges\n")
        for r in rows:
            out.write(f"{r.layer},{r.relation},{r.uuas:.6f},{r.n_gold_edges}\n")
    finally:
        if out is not sys.stdout:
            out.close()


def cmd_attn_dump(cfg):
    scorer = _load_scorer(cfg)
    dump = attn_dump(scorer, cfg["sentence"], cfg["out_dir"], upscale=cfg["upscale"], bos=cfg["bos"])
    n = sum(len(h) for h in dump.matrices)
    print(f"{n} attention maps over {len(dump.tokens)} positions -> {cfg['out_dir']}")


def cmd_gen_synth(cfg):
    kind, seed, size, out = cfg["kind"], cfg["seed"], cfg["size"], cfg["out"]
    if size < 1:
        raise ConfigError("size must be >= 1")
    if kind == "agreement-pairs":
        datamod.write_pairs(out, datamod.gen_agreement_pairs(seed, size))
    elif kind == "agreement-corpus":
        Path(out).write_text("".join(s + "\n" for s in datamod.gen_agreement_corpus(seed, size)), encoding="utf-8")
    elif kind == "parsed-corpus":
        datamod.write_parses(out, datamod.gen_parsed_corpus(seed, size))
    elif kind == "psych-measures":
        if not cfg["checkpoint"] or not cfg["freq_corpus"]:
            raise ConfigError("psych-measures needs --checkpoint (reference model) and --freq-corpus")
        scorer = _load_scorer(cfg)
        freqs = WordFrequencies.from_lines(datamod.read_corpus(cfg["freq_corpus"]))
        sentences = datamod.gen_agreement_corpus(seed, size)
        rows, truth = datamod.gen_psych_measures(scorer.score, sentences, freqs, seed, noise_sd=cfg["noise_sd"])
        datamod.write_measures(out, rows)
        Path(out + ".truth.json").write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    else:
        raise ConfigError(f"unknown kind {kind!r} (agreement-pairs, agreement-corpus, psych-measures, parsed-corpus)")
    print(f"{kind} ({size}, seed {seed}) -> {out}")


COMMANDS = {
    "tok-train": cmd_tok_train, "train": cmd_train, "score": cmd_score, "eval-blimp": cmd_eval_blimp,
    "eval-psycho": cmd_eval_psycho, "probe": cmd_probe, "attn-dump": cmd_attn_dump, "gen-synth": cmd_gen_synth,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if not args.command:
        parser.print_usage(sys.stderr)
        print("wmlm: error: a command is required", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    schema = SCHEMAS[args.command][1]
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve(schema, file_values, {k.name: getattr(args, k.name) for k in schema})
        COMMANDS[args.command](cfg)
    except (WmlmError, OSError, ValueError, KeyError) as exc:
        print(f"wmlm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
