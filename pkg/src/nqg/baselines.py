"""Non-neural comparison systems: retrieval by BM25 or edit distance, and DirectIn."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from .tensor import DegenerateInputError

SPLITTERS = frozenset({"?", "!", ",", ".", ";"})


class EmptyIndexError(RuntimeError):
    pass


@dataclass
class RetrievalIndex:
    """Training sentences with their questions, plus BM25 corpus statistics."""

    sentences: list[list[str]]
    questions: list[list[str]]
    df: Counter = field(init=False)
    avg_len: float = field(init=False)
    postings: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.sentences) != len(self.questions):
            raise ValueError("sentences and questions differ in length")
        self.df = Counter()
        self.postings = defaultdict(list)
        for i, s in enumerate(self.sentences):
            for term, tf in Counter(s).items():
                self.df[term] += 1
                self.postings[term].append((i, tf))
        total = sum(len(s) for s in self.sentences)
        self.avg_len = total / len(self.sentences) if self.sentences and total else 1.0

    @classmethod
    def from_pairs(cls, pairs) -> "RetrievalIndex":
        return cls([list(p.sentence) for p in pairs], [list(p.question) for p in pairs])

    def __len__(self) -> int:
        return len(self.sentences)

    def idf(self, term: str) -> float:
        """ln(1 + (N - df + 0.5) / (df + 0.5)); never negative."""
        n, df = len(self.sentences), self.df.get(term, 0)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def bm25_score(query: Sequence[str], document: Sequence[str], index: RetrievalIndex,
               k1: float = 1.2, b: float = 0.75) -> float:
    if k1 < 0 or not 0 <= b <= 1:
        raise ValueError(f"need k1 >= 0 and 0 <= b <= 1, got k1={k1}, b={b}")
    tf = Counter(document)
    norm = k1 * (1 - b + b * len(document) / index.avg_len)
    score = 0.0
    for term in query:
        f = tf.get(term, 0)
        if f:
            score += index.idf(term) * f * (k1 + 1) / (f + norm)
    return score


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Levenshtein distance with unit costs (works on strings or token lists)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def retrieve_question(index: RetrievalIndex, sentence: Sequence[str], metric: str = "bm25",
                      k1: float = 1.2, b: float = 0.75, chars: bool = False) -> list[str]:
    """Question of the best-matching training sentence; ties go to the earliest one.

    ``metric='bm25'`` maximises the BM25 score; ``metric='edit'`` minimises
    edit distance over tokens (or characters of the space-joined sentence
    when ``chars`` is set).
    """
    if not len(index):
        raise EmptyIndexError("retrieval index is empty")
    if metric == "bm25":
        scores: dict[int, float] = defaultdict(float)
        for term in sentence:
            if term not in index.postings:
                continue
            idf = index.idf(term)
            for doc, f in index.postings[term]:
                n = len(index.sentences[doc])
                scores[doc] += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * n / index.avg_len))
        best = min(scores, key=lambda d: (-scores[d], d)) if scores else 0
        if scores and scores[best] <= 0:
            best = 0
        return list(index.questions[best])
    if metric == "edit":
        query = " ".join(sentence) if chars else list(sentence)
        best, best_d = 0, None
        for i, s in enumerate(index.sentences):
            doc = " ".join(s) if chars else s
            if best_d is not None and abs(len(doc) - len(query)) >= best_d:
                continue
            d = edit_distance(query, doc)
            if best_d is None or d < best_d:
                best, best_d = i, d
                if d == 0:
                    break
        return list(index.questions[best])
    raise ValueError(f"unknown metric {metric!r}")


def direct_in(sentence: Sequence[str]) -> list[str]:
    """Longest splitter-delimited segment of the sentence (earliest on ties)."""
    segments, cur = [], []
    for tok in sentence:
        if tok in SPLITTERS:
            if cur:
                segments.append(cur)
            cur = []
        else:
            cur.append(tok)
    if cur:
        segments.append(cur)
    if not segments:
        raise DegenerateInputError("sentence consists only of splitters")
    return max(segments, key=len)
