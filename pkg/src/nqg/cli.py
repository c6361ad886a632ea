"""Command-line entry point: ``nqg {preprocess,train,generate,evaluate,baseline,stats}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import tensor as T
from .baselines import RetrievalIndex, direct_in, retrieve_question
from .data import SentenceQuestionPair, compute_stats, load_glove, preprocess, read_pairs, write_pairs
from .inference import DEFAULT_MAX_LEN, beam_search, export_attention
from .metrics import AlignmentError, evaluate, group_references, read_groups, read_lines
from .model import VARIANTS
from .training import PRESETS, Checkpoint, TrainingConfig, build_vocabularies, train

log = logging.getLogger("nqg")


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # one line on stderr instead of usage + message
        self.exit(2, f"{self.prog}: error: {message}\n")


def _write_lines(path, lines) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")


def _read_sources(path) -> list[SentenceQuestionPair]:
    """A pairs file (JSON lines) or plain text with one tokenized sentence per line."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    first = next((line for line in text.splitlines() if line.strip()), "")
    if first.lstrip().startswith("{"):
        return read_pairs(path)
    return [SentenceQuestionPair("", line.split(), []) for line in text.splitlines()]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_preprocess(args) -> None:
    documents = []
    for path in args.input:
        with open(path, encoding="utf-8") as f:
            try:
                documents.append(json.load(f))
            except json.JSONDecodeError as e:
                raise CliError(f"{path}: not valid JSON ({e})") from None
    splits, stats = preprocess(documents, seed=args.seed, paragraph_len=args.paragraph_len)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, pairs in splits.items():
        write_pairs(out / f"{name}.jsonl", pairs)
    (out / "stats.json").write_text(stats.to_json() + "\n", encoding="utf-8")


def _training_config(args) -> TrainingConfig:
    cfg = TrainingConfig.preset(args.preset)
    overrides = {
        "seed": args.seed, "variant": args.variant, "max_epochs": args.epochs, "batch_size": args.batch_size,
        "hidden_size": args.hidden_size, "embed_dim": args.embed_dim, "learning_rate": args.lr, "halving_start": args.halving_start,
        "precision": args.precision, "embedding_policy": args.embedding_policy,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides)


def cmd_train(args) -> None:
    cfg = _training_config(args)
    train_pairs, dev_pairs = read_pairs(args.train), read_pairs(args.dev)
    src_vocab, tgt_vocab = build_vocabularies(train_pairs, cfg)
    src_emb = tgt_emb = None
    if args.embeddings:
        rng = T.make_rng(cfg.seed)
        tables = []
        for vocab in (src_vocab, tgt_vocab):
            with open(args.embeddings, encoding="utf-8") as f:
                tables.append(load_glove(f, vocab, cfg.embed_dim, rng))
        src_emb, tgt_emb = (t.matrix for t in tables)
        log.info("pretrained coverage: source %.3f target %.3f", tables[0].coverage, tables[1].coverage)

    log_file = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        def on_epoch(record):
            if log_file is not None:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()

        best, _ = train(cfg, train_pairs, dev_pairs, src_vocab, tgt_vocab, src_emb, tgt_emb, on_epoch=on_epoch)
    finally:
        if log_file is not None:
            log_file.close()
    best.save(args.out)


def cmd_generate(args) -> None:
    checkpoint = Checkpoint.load(args.checkpoint)
    sources = _read_sources(args.input)
    attn_dir = Path(args.attention_dir) if args.attention_dir else None
    if attn_dir is not None:
        if not checkpoint.model_config.attention:
            raise CliError("--attention-dir needs an attention model; the vanilla variant has none")
        attn_dir.mkdir(parents=True, exist_ok=True)
    out = []
    for i, src in enumerate(sources, 1):
        best = beam_search(checkpoint, src.sentence, src.paragraph, k=args.beam, max_len=args.max_len)[0]
        out.append(" ".join(best.tokens))
        if attn_dir is not None:
            (attn_dir / f"{i:06d}.tsv").write_text(export_attention(best), encoding="utf-8")
    _write_lines(args.out, out)


def cmd_evaluate(args) -> None:
    hyps = read_lines(args.hyp)
    if args.ref_pairs:
        refs = [p.question for p in read_pairs(args.ref_pairs)]
    else:
        refs = read_lines(args.ref)
    groups = read_groups(args.groups) if args.groups else None
    if groups is None and len(hyps) != len(refs):
        bad = min(len(hyps), len(refs)) + 1
        raise AlignmentError(f"{len(hyps)} hypothesis lines but {len(refs)} reference lines; first bad line {bad}")
    report = evaluate(hyps, group_references(refs, groups), beta=args.beta)
    text = report.to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_baseline(args) -> None:
    sources = _read_sources(args.input)
    if args.method == "directin":
        out = [direct_in(s.sentence) for s in sources]
    else:
        if not args.train:
            raise CliError(f"{args.method} retrieval needs --train")
        index = RetrievalIndex.from_pairs(read_pairs(args.train))
        out = [retrieve_question(index, s.sentence, args.method, args.k1, args.b, args.chars) for s in sources]
    _write_lines(args.out, (" ".join(q) for q in out))


def cmd_stats(args) -> None:
    splits = {Path(p).stem: read_pairs(p) for p in args.pairs}
    text = compute_stats(splits).to_json() + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="nqg", description="Question generation from sentences.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("preprocess", help="SQuAD JSON -> sentence-question pair files + stats")
    s.add_argument("input", nargs="+", help="SQuAD v1.1 JSON file(s)")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--paragraph-len", type=int, default=100)
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train a model and write the best checkpoint")
    s.add_argument("--train", required=True, help="training pairs (JSON lines)")
    s.add_argument("--dev", required=True, help="dev pairs used for model selection")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--log", help="JSON-lines epoch log")
    s.add_argument("--embeddings", help="GloVe-format text file")
    s.add_argument("--preset", choices=sorted(PRESETS), default="paper")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--seed", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--hidden-size", type=int)
    s.add_argument("--embed-dim", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--halving-start", type=int, help="first epoch with a halved learning rate")
    s.add_argument("--precision", choices=("single", "double"))
    s.add_argument("--embedding-policy", choices=("learned", "fixed-pretrained"))
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="decode questions with beam search")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True, help="pairs file or one tokenized sentence per line")
    s.add_argument("--out", required=True)
    s.add_argument("--beam", type=int, default=3)
    s.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    s.add_argument("--attention-dir", help="write one attention TSV per input")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("evaluate", help="BLEU-1..4 and ROUGE-L")
    s.add_argument("--hyp", required=True)
    ref = s.add_mutually_exclusive_group(required=True)
    ref.add_argument("--ref", help="one reference per line")
    ref.add_argument("--ref-pairs", help="take references from the questions of a pairs file")
    s.add_argument("--groups", help="per hypothesis, first<TAB>last reference lines (1-based)")
    s.add_argument("--beta", type=float, default=1.2)
    s.add_argument("--out")
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("baseline", help="non-neural baselines")
    s.add_argument("method", choices=("bm25", "edit", "directin"))
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--train", help="pairs to retrieve from")
    s.add_argument("--k1", type=float, default=1.2)
    s.add_argument("--b", type=float, default=0.75)
    s.add_argument("--chars", action="store_true", help="character-level edit distance")
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("stats", help="corpus statistics of pair files")
    s.add_argument("pairs", nargs="+")
    s.add_argument("--out")
    s.set_defaults(func=cmd_stats)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except (CliError, OSError, ValueError, KeyError, RuntimeError) as e:
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"nqg {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
