"""SQuAD ingestion and sentence-question pair processing.

Pipeline: SQuAD JSON -> (paragraph, question, answer offset) records ->
sentence containing the answer -> lowercased token pairs -> article-level
80/10/10 split -> pruning of training pairs with no content-word overlap.

Tokenization is a small rule-based stand-in for CoreNLP. Pair files store
tokens without SOS/EOS; markers are added when pairs are encoded for a model.
"""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Sequence

import numpy as np

from .tensor import DegenerateInputError
from .vocab import RESERVED, Vocabulary

log = logging.getLogger(__name__)


class SchemaError(ValueError):
    pass


class LocationError(ValueError):
    pass


class GloveParseError(ValueError):
    pass


def _load_stopwords() -> frozenset[str]:
    text = resources.files("nqg").joinpath("resources/stopwords.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in text.splitlines() if w.strip() and not w.startswith("#"))


STOPWORDS = _load_stopwords()


# --------------------------------------------------------------------------
# tokenization and sentence splitting
# --------------------------------------------------------------------------

ABBREVIATIONS = frozenset(
    """mr. mrs. ms. dr. prof. sr. jr. st. mt. ft. no. vs. etc. e.g. i.e. inc. ltd. co. corp. jan. feb. mar.
    apr. jun. jul. aug. sep. sept. oct. nov. dec. u.s. u.k. u.n. a.m. p.m. approx. gen. gov. col. lt. sgt.
    rev. ca. c. est. vol. fig. al.""".split()
)
_DETACH = set('.,?!;:"()“”')
_BRACKETS = {"(": "-lrb-", ")": "-rrb-"}
_QUOTES = {"“": '"', "”": '"'}
_CLITIC = re.compile(r"^(.+?)('s|'re|'ve|'ll|'d|'m|n't)$", re.IGNORECASE)
_INITIALISM = re.compile(r"^(?:[A-Za-z]\.)+[A-Za-z]?$")


def _keeps_period(word: str) -> bool:
    return (word + ".").lower() in ABBREVIATIONS or bool(_INITIALISM.match(word + "."))


def tokenize(text: str) -> list[str]:
    """Whitespace split, then detach ``. , ? ! ; : " ( )`` from word edges.

    Brackets become ``-lrb-``/``-rrb-``; clitics (``'s``, ``n't`` ...) are
    split off; periods of known abbreviations and initialisms stay attached.
    """
    tokens: list[str] = []
    for chunk in text.split():
        lead: list[str] = []
        while chunk and chunk[0] in _DETACH:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail: list[str] = []
        while chunk and chunk[-1] in _DETACH:
            if chunk[-1] == "." and not trail and _keeps_period(chunk[:-1]):
                break
            trail.insert(0, chunk[-1])
            chunk = chunk[:-1]
        body: list[str] = []
        if chunk:
            m = _CLITIC.match(chunk)
            body = [m.group(1), m.group(2)] if m else [chunk]
        for tok in lead + body + trail:
            tokens.append(_BRACKETS.get(tok, _QUOTES.get(tok, tok)))
    return tokens


_BOUNDARY = re.compile(r"[.?!]+[\"'”’)\]]*\s+")


def split_sentences(text: str) -> list[tuple[int, int]]:
    """Character spans ``[start, end)`` of sentences; together they partition ``text``.

    A boundary is ``. ? !`` followed by whitespace, unless the period ends a
    known abbreviation or initial, or the next word starts in lowercase.
    """
    starts = [0]
    for m in _BOUNDARY.finditer(text):
        end = m.end()
        if end >= len(text):
            continue
        if text[end].islower():
            continue
        punct = m.group(0).rstrip()
        if punct.startswith(".") and len(punct.rstrip("\"'”’)]")) == 1:
            before = text[:m.start()].split()
            word = before[-1].lstrip("".join(_DETACH)) if before else ""
            if _keeps_period(word) or (len(word) == 1 and word.isalpha()):
                continue
        starts.append(end)
    bounds = starts + [len(text)]
    return [(a, b) for a, b in zip(bounds, bounds[1:]) if b > a]


@dataclass
class Sentence:
    tokens: list[str]
    start: int
    end: int


def sentences_with_spans(text: str) -> list[Sentence]:
    return [Sentence(tokenize(text[a:b]), a, b) for a, b in split_sentences(text)]


def locate_answer_sentence(sentences: Sequence[Sentence], answer_start: int, answer_len: int) -> list[str]:
    """Tokens of the sentence holding the answer span, or of all sentences it crosses, concatenated."""
    end = answer_start + max(answer_len, 1)
    covered = [s for s in sentences if s.start < end and answer_start < s.end]
    if not covered:
        raise LocationError(f"answer span [{answer_start}, {end}) lies outside every sentence")
    return [t for s in covered for t in s.tokens]


# --------------------------------------------------------------------------
# SQuAD
# --------------------------------------------------------------------------

@dataclass
class SquadRecord:
    article_id: str
    paragraph: str
    question: str
    answer_text: str
    answer_start: int


def _require(obj, key: str, kind, path: str):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{path}: missing field {key!r}")
    value = obj[key]
    if not isinstance(value, kind):
        raise SchemaError(f"{path}.{key}: expected {kind.__name__ if isinstance(kind, type) else kind}")
    return value


def ingest_squad(document: dict) -> list[SquadRecord]:
    """One record per question (first answer), in document order.

    Answers whose offset falls outside the paragraph are dropped with a warning.
    """
    records = []
    for a, article in enumerate(_require(document, "data", list, "$")):
        apath = f"$.data[{a}]"
        title = _require(article, "title", str, apath)
        for p, para in enumerate(_require(article, "paragraphs", list, apath)):
            ppath = f"{apath}.paragraphs[{p}]"
            context = _require(para, "context", str, ppath)
            for q, qa in enumerate(_require(para, "qas", list, ppath)):
                qpath = f"{ppath}.qas[{q}]"
                question = _require(qa, "question", str, qpath)
                answers = _require(qa, "answers", list, qpath)
                if not answers:
                    raise SchemaError(f"{qpath}.answers: empty")
                text = _require(answers[0], "text", str, f"{qpath}.answers[0]")
                start = _require(answers[0], "answer_start", int, f"{qpath}.answers[0]")
                if not 0 <= start < len(context):
                    log.warning("%s: answer_start %d outside context of length %d; skipped", qpath, start, len(context))
                    continue
                records.append(SquadRecord(title, context, question, text, start))
    return records


# --------------------------------------------------------------------------
# pairs
# --------------------------------------------------------------------------

@dataclass
class SentenceQuestionPair:
    article_id: str
    sentence: list[str]
    question: list[str]
    paragraph: list[str] | None = None
    answer_start: int | None = None

    def to_json(self) -> str:
        d = {"article_id": self.article_id, "sentence": self.sentence, "question": self.question}
        if self.paragraph is not None:
            d["paragraph"] = self.paragraph
        return json.dumps(d, ensure_ascii=False)

    @classmethod
    def from_json(cls, line: str) -> "SentenceQuestionPair":
        d = json.loads(line)
        for key in ("article_id", "sentence", "question"):
            if key not in d:
                raise SchemaError(f"pair record missing {key!r}")
        return cls(str(d["article_id"]), list(d["sentence"]), list(d["question"]), d.get("paragraph"))


def write_pairs(path, pairs: Iterable[SentenceQuestionPair]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in pairs:
            f.write(p.to_json() + "\n")


def read_pairs(path) -> list[SentenceQuestionPair]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                out.append(SentenceQuestionPair.from_json(line))
            except (ValueError, TypeError) as e:
                raise SchemaError(f"{path}:{lineno}: {e}") from e
    return out


def build_pairs(records: Iterable[SquadRecord], paragraph_len: int = 100) -> tuple[list[SentenceQuestionPair], int]:
    """Turn records into lowercased pairs; also returns how many answers crossed sentence boundaries."""
    cache: dict[str, list[Sentence]] = {}
    pairs, multi = [], 0
    for r in records:
        sents = cache.get(r.paragraph)
        if sents is None:
            sents = cache[r.paragraph] = sentences_with_spans(r.paragraph)
        end = r.answer_start + max(len(r.answer_text), 1)
        if sum(1 for s in sents if s.start < end and r.answer_start < s.end) > 1:
            multi += 1
        sentence = locate_answer_sentence(sents, r.answer_start, len(r.answer_text))
        question = tokenize(r.question)
        paragraph = [t for s in sents for t in s.tokens][:paragraph_len]
        pairs.append(SentenceQuestionPair(
            r.article_id,
            [t.lower() for t in sentence],
            [t.lower() for t in question],
            [t.lower() for t in paragraph],
            r.answer_start,
        ))
    return pairs, multi


_PUNCT = set(string.punctuation) | {"-lrb-", "-rrb-", "``", "''"}


def content_tokens(tokens: Iterable[str], stopwords: frozenset[str] = STOPWORDS) -> set[str]:
    """Tokens that count for overlap: not stopwords, not markers, not pure punctuation."""
    return {
        t for t in tokens
        if t not in stopwords and t not in RESERVED and t not in _PUNCT and not all(ch in string.punctuation for ch in t)
    }


def shares_content(pair: SentenceQuestionPair, stopwords: frozenset[str] = STOPWORDS) -> bool:
    return bool(content_tokens(pair.sentence, stopwords) & content_tokens(pair.question, stopwords))


def prune_pairs(pairs: Iterable[SentenceQuestionPair], stopwords: frozenset[str] = STOPWORDS) -> list[SentenceQuestionPair]:
    return [p for p in pairs if shares_content(p, stopwords)]


def overlap_percentage(pair: SentenceQuestionPair, stopwords: frozenset[str] = STOPWORDS) -> float:
    """Distinct shared content tokens over the number of question tokens."""
    if not pair.question:
        raise DegenerateInputError("empty question")
    shared = content_tokens(pair.question, stopwords) & set(pair.sentence)
    return len(shared) / len(pair.question)


def split_articles(article_ids: Iterable[str], ratios: Sequence[float] = (0.8, 0.1, 0.1),
                   seed: int = 1) -> tuple[list[str], list[str], list[str]]:
    """Seeded shuffle of the distinct article ids, then a prefix split."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = sorted(set(article_ids))
    if len(ids) < 3:
        raise ValueError(f"need at least 3 articles to split, got {len(ids)}")
    order = [ids[i] for i in np.random.Generator(np.random.PCG64(seed)).permutation(len(ids))]
    n_train = int(round(ratios[0] * len(ids)))
    n_dev = int(round(ratios[1] * len(ids)))
    return order[:n_train], order[n_train:n_train + n_dev], order[n_train + n_dev:]


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------

@dataclass
class SplitStats:
    pairs: int = 0
    sentences: int = 0
    mean_sentence_tokens: float = 0.0
    mean_question_tokens: float = 0.0
    questions_per_sentence: float = 0.0
    overlap_histogram: list[int] = field(default_factory=lambda: [0] * 10)
    zero_overlap_fraction: float = 0.0


@dataclass
class CorpusStats:
    splits: dict[str, SplitStats]
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"splits": {k: asdict(v) for k, v in self.splits.items()}, **self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def split_stats(pairs: Sequence[SentenceQuestionPair], stopwords: frozenset[str] = STOPWORDS) -> SplitStats:
    if not pairs:
        return SplitStats()
    hist = [0] * 10
    zero = 0
    for p in pairs:
        frac = overlap_percentage(p, stopwords) if p.question else 0.0
        hist[min(int(frac * 10), 9)] += 1
        zero += not shares_content(p, stopwords)
    sentences = len({(p.article_id, tuple(p.sentence)) for p in pairs})
    return SplitStats(
        pairs=len(pairs),
        sentences=sentences,
        mean_sentence_tokens=sum(len(p.sentence) for p in pairs) / len(pairs),
        mean_question_tokens=sum(len(p.question) for p in pairs) / len(pairs),
        questions_per_sentence=len(pairs) / sentences,
        overlap_histogram=hist,
        zero_overlap_fraction=zero / len(pairs),
    )


def compute_stats(splits: dict[str, Sequence[SentenceQuestionPair]], stopwords: frozenset[str] = STOPWORDS) -> CorpusStats:
    return CorpusStats({name: split_stats(pairs, stopwords) for name, pairs in splits.items()})


def preprocess(documents: Sequence[dict], seed: int = 1, paragraph_len: int = 100,
               stopwords: frozenset[str] = STOPWORDS) -> tuple[dict[str, list[SentenceQuestionPair]], CorpusStats]:
    """Full pipeline over one or more SQuAD documents (e.g. the public train and dev files).

    Only the training split is pruned; dev and test keep every pair.
    """
    records = [r for doc in documents for r in ingest_squad(doc)]
    pairs, multi = build_pairs(records, paragraph_len)
    train_ids, dev_ids, test_ids = split_articles([p.article_id for p in pairs], seed=seed)
    where = {a: "train" for a in train_ids} | {a: "dev" for a in dev_ids} | {a: "test" for a in test_ids}
    splits: dict[str, list[SentenceQuestionPair]] = {"train": [], "dev": [], "test": []}
    for p in pairs:
        splits[where[p.article_id]].append(p)
    unpruned_train = split_stats(splits["train"], stopwords)
    splits["train"] = prune_pairs(splits["train"], stopwords)
    stats = compute_stats(splits, stopwords)
    stats.extra = {
        "records": len(records),
        "multi_sentence_answers": multi,
        "train_before_pruning": asdict(unpruned_train),
        "pruned_fraction": unpruned_train.zero_overlap_fraction,
    }
    return splits, stats


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------

@dataclass
class EmbeddingMatrix:
    matrix: np.ndarray  # |vocab| x dim
    pretrained: np.ndarray  # bool per row

    @property
    def coverage(self) -> float:
        return float(self.pretrained.mean())


def load_glove(stream: Iterable[str], vocab: Vocabulary, dim: int, rng: np.random.Generator,
               scale: float = 0.1) -> EmbeddingMatrix:
    """Fill vocabulary rows from a GloVe text stream; other rows are uniform in [-scale, scale].

    Each line is split from the right, so keys containing spaces survive. An
    exact key match wins over a lowercased one. Field counts are checked on
    every line; numeric values are parsed only for lines that are used.
    """
    matrix = rng.uniform(-scale, scale, size=(len(vocab), dim)).astype(np.float32)
    pretrained = np.zeros(len(vocab), dtype=bool)
    exact = np.zeros(len(vocab), dtype=bool)
    for lineno, line in enumerate(stream, 1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.rsplit(" ", dim)
        if len(parts) != dim + 1:
            raise GloveParseError(f"line {lineno}: expected a key and {dim} values")
        key = parts[0]
        idx = vocab.index.get(key)
        is_exact = idx is not None
        if idx is None:
            idx = vocab.index.get(key.lower())
        if idx is None or idx < len(RESERVED) or exact[idx] or (not is_exact and pretrained[idx]):
            continue
        try:
            matrix[idx] = np.array([float(v) for v in parts[1:]], dtype=np.float32)
        except ValueError as e:
            raise GloveParseError(f"line {lineno}: {e}") from e
        pretrained[idx] = True
        exact[idx] = is_exact
    return EmbeddingMatrix(matrix, pretrained)


# --------------------------------------------------------------------------
# synthetic corpus
# --------------------------------------------------------------------------

_SUBJECTS = ["the king", "the farmer", "a young scientist", "the army", "the old company", "marie", "the council",
             "the monks", "a merchant", "the students", "the painter", "the navy"]
_VERBS = [("built", "build"), ("found", "find"), ("sold", "sell"), ("painted", "paint"), ("studied", "study"),
          ("visited", "visit"), ("wrote", "write"), ("discovered", "discover")]
_OBJECTS = ["a bridge", "the temple", "gold", "a new map", "the castle", "rare plants", "a long poem", "the harbor",
            "ancient coins", "a library"]
_PLACES = ["london", "paris", "egypt", "the valley", "the north", "rome", "china", "the islands"]


def synthetic_pairs(n: int = 32, seed: int = 0) -> list[SentenceQuestionPair]:
    """Deterministic templated pairs whose questions copy phrases of their sentence."""
    rng = np.random.Generator(np.random.PCG64(seed))
    pairs, seen = [], set()
    while len(pairs) < n:
        subj = _SUBJECTS[rng.integers(len(_SUBJECTS))].split()
        verb = int(rng.integers(len(_VERBS)))
        past, base = _VERBS[verb]
        obj = _OBJECTS[rng.integers(len(_OBJECTS))].split()
        place = _PLACES[rng.integers(len(_PLACES))].split()
        kind = verb % 3  # the question type is a function of the sentence
        sentence = subj + [past] + obj + ["in"] + place + ["."]
        if kind == 0:
            question = ["who", past] + obj + ["in"] + place + ["?"]
        elif kind == 1:
            question = ["what", "did"] + subj + [base, "in"] + place + ["?"]
        else:
            question = ["where", "did"] + subj + [base] + obj + ["?"]
        key = (tuple(sentence), tuple(question))
        if key in seen:
            continue
        seen.add(key)
        other = _SUBJECTS[rng.integers(len(_SUBJECTS))].split() + ["lived", "in"] + place + ["."]
        pairs.append(SentenceQuestionPair(f"toy-{len(pairs) % 4}", sentence, question, other + sentence))
    return pairs

