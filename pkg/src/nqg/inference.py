"""Greedy and beam-search decoding, UNK replacement and attention export.

Decoding never emits PAD or SOS: those two ids are removed from every
expansion. Hypotheses are ranked by raw cumulative log-probability, and ties
go to the lower token id.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .lstm import LstmState
from .model import Encoded, Seq2Seq
from .tensor import DegenerateInputError, Tensor
from .training import Checkpoint
from .vocab import EOS, PAD, SOS, UNK, Vocabulary, source_ids

DEFAULT_MAX_LEN = 50


class UnsupportedOperation(RuntimeError):
    pass


@dataclass
class DecoderHypothesis:
    tokens: list[int]
    score: float
    row: int  # row of the decoder state batch holding this hypothesis' state
    argmax: list[int] = field(default_factory=list)
    attention: list[np.ndarray] = field(default_factory=list)
    step_log_probs: list[float] = field(default_factory=list)

    @property
    def finished(self) -> bool:
        return bool(self.tokens) and self.tokens[-1] == EOS


@dataclass
class GenerationResult:
    tokens: list[str]  # surface form, UNK replaced, EOS stripped
    ids: list[int]  # raw ids as emitted, EOS stripped
    score: float
    source: list[str]  # sentence tokens that attention columns refer to
    attention: np.ndarray | None = None  # steps x len(source)
    argmax: list[int] | None = None  # per emitted token, index into source
    step_log_probs: list[float] = field(default_factory=list)


def _allowed(log_probs: np.ndarray) -> np.ndarray:
    out = np.array(log_probs, dtype=np.float64)
    out[..., PAD] = -np.inf
    out[..., SOS] = -np.inf
    return out


def _select_state(state: list[LstmState], rows) -> list[LstmState]:
    rows = np.asarray(rows, dtype=np.int64)
    return [LstmState(Tensor(s.h.data[rows]), Tensor(s.c.data[rows])) for s in state]


def encode_source(model: Seq2Seq, src: Sequence[int], para: Sequence[int] | None = None) -> Encoded:
    if len(src) == 0:
        raise DegenerateInputError("empty source")
    src_arr = np.asarray([src], dtype=np.int64)
    para_arr = None if para is None else np.asarray([para], dtype=np.int64)
    return model.encode(src_arr, para=para_arr)


def beam_search_ids(model: Seq2Seq, src: Sequence[int], para: Sequence[int] | None = None, k: int = 3,
                    max_len: int = DEFAULT_MAX_LEN) -> list[DecoderHypothesis]:
    """Beam search over token ids; returns the final beam, best first.

    Finished hypotheses stay in the beam (unexpanded) and compete with new
    expansions; the search stops once every hypothesis in the beam is
    finished or ``max_len`` tokens have been emitted.
    """
    if k < 1 or max_len < 1:
        raise ValueError("k and max_len must be >= 1")
    enc = encode_source(model, src, para)
    state = enc.init
    beam = [DecoderHypothesis([], 0.0, 0)]
    for _ in range(max_len):
        live = [h for h in beam if not h.finished]
        if not live:
            break
        rows = [h.row for h in live]
        step_state = _select_state(state, rows)
        step_enc = enc.select(np.zeros(len(live), dtype=np.int64))
        prev = [h.tokens[-1] if h.tokens else SOS for h in live]
        record, state = model.decoder_step(prev, step_state, step_enc)
        logp = _allowed(record.log_probs.data)
        attn = None if record.attention is None else record.attention.data

        # candidate = (cumulative, step log-prob, token, origin); origin < 0 marks a carried finished hypothesis
        cands = []
        for i, h in enumerate(beam):
            if h.finished:
                cands.append((h.score, 0.0, h.tokens[-1], -1 - i))
        totals = np.array([h.score for h in live])[:, None] + logp
        for i in range(len(live)):
            for tok in np.flatnonzero(np.isfinite(totals[i])):
                cands.append((totals[i, tok], logp[i, tok], int(tok), i))
        cands.sort(key=lambda c: (-c[0], -c[1], c[2], c[3]))

        new_beam = []
        for score, step_lp, tok, origin in cands[:k]:
            if origin < 0:
                new_beam.append(beam[-1 - origin])
                continue
            parent = live[origin]
            new_beam.append(DecoderHypothesis(
                parent.tokens + [tok],
                float(score),
                origin,
                parent.argmax + ([] if attn is None else [int(record.argmax[origin])]),
                parent.attention + ([] if attn is None else [attn[origin]]),
                parent.step_log_probs + [float(step_lp)],
            ))
        beam = new_beam
    beam.sort(key=lambda h: -h.score)
    return beam


def greedy_ids(model: Seq2Seq, src: Sequence[int], para: Sequence[int] | None = None,
               max_len: int = DEFAULT_MAX_LEN) -> DecoderHypothesis:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    enc = encode_source(model, src, para)
    state = enc.init
    hyp = DecoderHypothesis([], 0.0, 0)
    for _ in range(max_len):
        prev = hyp.tokens[-1] if hyp.tokens else SOS
        record, state = model.decoder_step([prev], state, enc)
        logp = _allowed(record.log_probs.data)[0]
        tok = int(np.argmax(logp))
        hyp.tokens.append(tok)
        hyp.score += float(logp[tok])
        hyp.step_log_probs.append(float(logp[tok]))
        if record.attention is not None:
            hyp.argmax.append(int(record.argmax[0]))
            hyp.attention.append(record.attention.data[0])
        if tok == EOS:
            break
    return hyp


def replace_unk(ids: Sequence[int], argmax: Sequence[int] | None, source: Sequence[str],
                vocab: Vocabulary) -> list[str]:
    """Map ids to tokens, replacing each UNK with the most-attended source token."""
    if argmax is None:
        raise UnsupportedOperation("UNK replacement needs attention (not available in the vanilla model)")
    if len(argmax) < len(ids):
        raise ValueError(f"{len(ids)} tokens but only {len(argmax)} attention indices")
    return [source[argmax[t]] if i == UNK else vocab.token(i) for t, i in enumerate(ids)]


def _to_result(hyp: DecoderHypothesis, sentence: Sequence[str], vocab: Vocabulary, attention: bool) -> GenerationResult:
    ids = hyp.tokens[:-1] if hyp.finished else list(hyp.tokens)
    n = len(ids)
    if not attention:
        tokens = [vocab.token(i) for i in ids]
        return GenerationResult(tokens, ids, hyp.score, list(sentence), step_log_probs=hyp.step_log_probs)
    # encoder position 0 is SOS, so sentence word j sits at position j + 1
    argmax = [a - 1 for a in hyp.argmax[:n]]
    matrix = np.array([row[1:len(sentence) + 1] for row in hyp.attention[:n]]).reshape(n, len(sentence))
    tokens = replace_unk(ids, argmax, sentence, vocab)
    return GenerationResult(tokens, ids, hyp.score, list(sentence), matrix, argmax, hyp.step_log_probs)


def _source(checkpoint: Checkpoint, sentence: Sequence[str], paragraph: Sequence[str] | None):
    cfg = checkpoint.config
    if not sentence:
        raise DegenerateInputError("empty source sentence")
    src = source_ids(sentence, checkpoint.src_vocab, reverse=cfg.variant == "vanilla")
    para = None
    if cfg.variant == "paragraph":
        para = source_ids(list(paragraph or [])[:cfg.paragraph_len], checkpoint.src_vocab)
    return src, para


def beam_search(checkpoint: Checkpoint, sentence: Sequence[str], paragraph: Sequence[str] | None = None,
                k: int = 3, max_len: int = DEFAULT_MAX_LEN) -> list[GenerationResult]:
    src, para = _source(checkpoint, sentence, paragraph)
    model = checkpoint.model()
    beam = beam_search_ids(model, src, para, k, max_len)
    return [_to_result(h, sentence, checkpoint.tgt_vocab, model.config.attention) for h in beam]


def greedy_decode(checkpoint: Checkpoint, sentence: Sequence[str], paragraph: Sequence[str] | None = None,
                  max_len: int = DEFAULT_MAX_LEN) -> GenerationResult:
    src, para = _source(checkpoint, sentence, paragraph)
    model = checkpoint.model()
    return _to_result(greedy_ids(model, src, para, max_len), sentence, checkpoint.tgt_vocab, model.config.attention)


def export_attention(result: GenerationResult) -> str:
    """Tab-separated heatmap data: a header of source tokens, then one row per generated token."""
    if result.attention is None:
        raise UnsupportedOperation("no attention matrix (vanilla model)")
    lines = ["\t".join([""] + list(result.source))]
    for tok, row in zip(result.tokens, result.attention):
        lines.append("\t".join([tok] + [f"{w:.6f}" for w in row]))
    return "\n".join(lines) + "\n"


def parse_attention(text: str) -> tuple[list[str], list[str], np.ndarray]:
    """Inverse of :func:`export_attention`: (source tokens, generated tokens, matrix)."""
    rows = [line.split("\t") for line in text.rstrip("\n").split("\n")]
    source = rows[0][1:]
    generated = [r[0] for r in rows[1:]]
    matrix = np.array([[float(x) for x in r[1:]] for r in rows[1:]], dtype=np.float64).reshape(len(generated), len(source))
    return source, generated, matrix
