"""Corpus-level BLEU-1..4 and ROUGE-L over pre-tokenized text.

Scores follow the caption-evaluation conventions: BLEU clips n-gram counts
against the per-instance maximum over references and uses the closest
reference length for the brevity penalty; ROUGE-L is an LCS-based F-measure
with beta = 1.2, maximised over references and averaged over instances.
All reported scores are on a 0-100 scale.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .tensor import DegenerateInputError

SMOOTH = 1e-9


class AlignmentError(ValueError):
    pass


@dataclass
class EvalInstance:
    hypothesis: list[str]
    references: list[list[str]]

    def __post_init__(self):
        if not self.references:
            raise ValueError("an instance needs at least one reference")


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def max_ref_counts(refs: Sequence[Sequence[str]], n: int) -> Counter:
    """Per n-gram, the largest count in any single reference (the clipping ceiling)."""
    out: Counter = Counter()
    for ref in refs:
        out |= ngrams(ref, n)
    return out


def closest_ref_length(hyp_len: int, refs: Sequence[Sequence[str]]) -> int:
    return min((abs(len(r) - hyp_len), len(r)) for r in refs)[1]


@dataclass
class BleuResult:
    scores: list[float]  # BLEU-1..max_n, 0-100
    matches: list[int]
    totals: list[int]
    hyp_length: int
    ref_length: int
    brevity_penalty: float


def bleu(instances: Sequence[EvalInstance], max_n: int = 4) -> BleuResult:
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    if not instances:
        raise DegenerateInputError("no instances to score")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for inst in instances:
        hyp_len += len(inst.hypothesis)
        ref_len += closest_ref_length(len(inst.hypothesis), inst.references)
        for n in range(1, max_n + 1):
            counts = ngrams(inst.hypothesis, n)
            max_ref = max_ref_counts(inst.references, n)
            matches[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            totals[n - 1] += max(len(inst.hypothesis) - n + 1, 0)

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len <= ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    log_p = []
    for m, t in zip(matches, totals):
        log_p.append(math.log((m if m > 0 else SMOOTH) / t) if t > 0 else math.log(SMOOTH))
    scores = []
    for n in range(1, max_n + 1):
        scores.append(100.0 * bp * math.exp(sum(log_p[:n]) / n))
    return BleuResult(scores, matches, totals, hyp_len, ref_len, bp)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_instance(hyp: Sequence[str], refs: Sequence[Sequence[str]], beta: float = 1.2) -> float:
    """Best F_beta over references, in [0, 1]."""
    best = 0.0
    if not hyp:
        return best
    for ref in refs:
        lcs = lcs_length(hyp, ref)
        if lcs == 0 or not ref:
            continue
        p, r = lcs / len(hyp), lcs / len(ref)
        f = (1 + beta ** 2) * p * r / (r + beta ** 2 * p)
        best = max(best, f)
    return best


@dataclass
class RougeResult:
    score: float  # 0-100
    per_instance: list[float]
    empty_hypotheses: int


def rouge_l(instances: Sequence[EvalInstance], beta: float = 1.2) -> RougeResult:
    if beta <= 0:
        raise ValueError("beta must be positive")
    if not instances:
        raise DegenerateInputError("no instances to score")
    per = [rouge_l_instance(i.hypothesis, i.references, beta) for i in instances]
    empty = sum(1 for i in instances if not i.hypothesis)
    return RougeResult(100.0 * sum(per) / len(per), per, empty)


@dataclass
class MetricReport:
    bleu: list[float]
    rouge_l: float
    counts: dict = field(default_factory=dict)
    per_instance: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = {f"BLEU-{n}": s for n, s in enumerate(self.bleu, 1)}
        d["ROUGE-L"] = self.rouge_l
        d["counts"] = self.counts
        d["per_instance"] = self.per_instance
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def evaluate(hypotheses: Sequence[Sequence[str]], references: Sequence[Sequence[Sequence[str]]],
             max_n: int = 4, beta: float = 1.2) -> MetricReport:
    """Score hypothesis ``i`` against the reference group ``i``."""
    if len(hypotheses) != len(references):
        first_bad = min(len(hypotheses), len(references)) + 1
        raise AlignmentError(
            f"{len(hypotheses)} hypotheses but {len(references)} reference groups; first unmatched line {first_bad}"
        )
    instances = [EvalInstance(list(h), [list(r) for r in refs]) for h, refs in zip(hypotheses, references)]
    b = bleu(instances, max_n)
    r = rouge_l(instances, beta)
    counts = asdict(b)
    counts.pop("scores")
    counts["empty_hypotheses"] = r.empty_hypotheses
    per_instance = []
    for inst, score in zip(instances, r.per_instance):
        clip = max_ref_counts(inst.references, 1)
        per_instance.append({
            "hyp_length": len(inst.hypothesis),
            "unigram_matches": sum(min(c, clip[g]) for g, c in ngrams(inst.hypothesis, 1).items()),
            "rouge_l": 100.0 * score,
        })
    return MetricReport(b.scores, r.score, counts, per_instance)


# --------------------------------------------------------------------------
# files
# --------------------------------------------------------------------------

def read_lines(path) -> list[list[str]]:
    with open(path, encoding="utf-8") as f:
        return [line.split() for line in f.read().splitlines()]


def read_groups(path) -> list[tuple[int, int]]:
    """Grouping file: per hypothesis line, ``first<TAB>last`` 1-based inclusive reference lines."""
    groups = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                first, last = (int(x) for x in line.split())
            except ValueError:
                raise AlignmentError(f"{path}:{lineno}: expected two integers") from None
            if not 1 <= first <= last:
                raise AlignmentError(f"{path}:{lineno}: bad range {first}-{last}")
            groups.append((first, last))
    return groups


def group_references(refs: Sequence[Sequence[str]], groups: Sequence[tuple[int, int]] | None) -> list[list[list[str]]]:
    if groups is None:
        return [[list(r)] for r in refs]
    out = []
    for i, (first, last) in enumerate(groups, 1):
        if last > len(refs):
            raise AlignmentError(f"group {i} refers to reference line {last}, but there are only {len(refs)}")
        out.append([list(r) for r in refs[first - 1:last]])
    return out


def write_groups(path, sizes: Sequence[int]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        start = 1
        for n in sizes:
            f.write(f"{start}\t{start + n - 1}\n")
            start += n
