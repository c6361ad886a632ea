"""Independent reference implementations used as test oracles.

Nothing here imports the code under test; each function is written from the
textbook definition, favouring clarity over speed.
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np


def numeric_grad(f, x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        up = f()
        x[i] = old - eps
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| / max(|a|, |b|, floor), elementwise."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def matmul_loops(a, b):
    n, k = len(a), len(b)
    m = len(b[0])
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            for t in range(k):
                out[i][j] += a[i][t] * b[t][j]
    return out


# --------------------------------------------------------------------------
# strings
# --------------------------------------------------------------------------

def edit_distance_recursive(a, b) -> int:
    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))

    return d(len(a), len(b))


def lcs_exhaustive(a, b) -> int:
    """Longest common subsequence by trying subsequences of the shorter input, longest first."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subseq(sub, seq):
        it = iter(seq)
        return all(x in it for x in sub)

    for n in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), n):
            if is_subseq([short[i] for i in idx], long_):
                return n
    return 0


def lcs_recursive(a, b) -> int:
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def f(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + f(i + 1, j + 1)
        return max(f(i + 1, j), f(i, j + 1))

    return f(0, 0)


# --------------------------------------------------------------------------
# metrics
# --------------------------------------------------------------------------

def bleu_textbook(hyps, refs_list, max_n=4, smooth=1e-9):
    """Corpus BLEU-1..max_n (0-100), written out from the definition."""
    match = [0] * (max_n + 1)
    total = [0] * (max_n + 1)
    c = r = 0
    for hyp, refs in zip(hyps, refs_list):
        c += len(hyp)
        best = None
        for ref in refs:
            key = (abs(len(ref) - len(hyp)), len(ref))
            if best is None or key < best:
                best = key
        r += best[1]
        for n in range(1, max_n + 1):
            grams = [tuple(hyp[i:i + n]) for i in range(len(hyp) - n + 1)]
            total[n] += len(grams)
            for g in set(grams):
                own = grams.count(g)
                ceiling = 0
                for ref in refs:
                    rg = [tuple(ref[i:i + n]) for i in range(len(ref) - n + 1)]
                    ceiling = max(ceiling, rg.count(g))
                match[n] += min(own, ceiling)
    if c == 0:
        bp = 0.0
    else:
        bp = 1.0 if c > r else math.exp(1 - r / c)
    scores = []
    acc = 0.0
    for n in range(1, max_n + 1):
        p = (match[n] or smooth) / total[n] if total[n] else smooth
        acc += math.log(p)
        scores.append(100.0 * bp * math.exp(acc / n))
    return scores


def rouge_l_textbook(hyps, refs_list, beta=1.2):
    scores = []
    for hyp, refs in zip(hyps, refs_list):
        best = 0.0
        for ref in refs:
            lcs = lcs_recursive(hyp, ref)
            if lcs == 0:
                continue
            prec, rec = lcs / len(hyp), lcs / len(ref)
            best = max(best, ((1 + beta * beta) * prec * rec) / (rec + beta * beta * prec))
        scores.append(best)
    return 100.0 * sum(scores) / len(scores)


# --------------------------------------------------------------------------
# retrieval
# --------------------------------------------------------------------------

def bm25_bruteforce(query, docs, k1=1.2, b=0.75):
    """Score of every document, recomputing all statistics from scratch."""
    n = len(docs)
    avg = sum(len(d) for d in docs) / n
    out = []
    for doc in docs:
        s = 0.0
        for term in query:
            f = doc.count(term)
            if not f:
                continue
            df = sum(1 for d in docs if term in d)
            idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
            s += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * len(doc) / avg))
        out.append(s)
    return out


def splitter_segments(tokens, splitters):
    """Maximal runs of non-splitter tokens, found by scanning split positions."""
    cuts = [-1] + [i for i, t in enumerate(tokens) if t in splitters] + [len(tokens)]
    return [list(tokens[a + 1:b]) for a, b in zip(cuts, cuts[1:]) if b - a > 1]


def tensor_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| over the tensor, relative to the tensor's largest gradient magnitude."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0))
    return float(np.abs(a - b).max(initial=0.0) / scale) if scale > 0 else 0.0


# --------------------------------------------------------------------------
# decoding
# --------------------------------------------------------------------------

def all_outputs(alphabet, eos, max_len):
    """Every output a decoder can emit: EOS-terminated up to max_len, or max_len tokens without EOS."""
    body = [t for t in alphabet if t != eos]
    for n in range(max_len):
        for seq in itertools.product(body, repeat=n):
            yield list(seq) + [eos]
    yield from (list(seq) for seq in itertools.product(body, repeat=max_len))


def best_output(score, alphabet, eos, max_len):
    """Exhaustive argmax of ``score(seq)``; ties go to the lexicographically smaller sequence."""
    best = None
    for seq in all_outputs(alphabet, eos, max_len):
        s = score(seq)
        if best is None or s > best[0] or (s == best[0] and seq < best[1]):
            best = (s, seq)
    return best


def edit_distance_memo():
    """Recursive Levenshtein over string prefixes with one cache shared across calls."""

    @lru_cache(maxsize=None)
    def d(a: str, b: str) -> int:
        if not a:
            return len(b)
        if not b:
            return len(a)
        return min(d(a[:-1], b) + 1, d(a, b[:-1]) + 1, d(a[:-1], b[:-1]) + (a[-1] != b[-1]))

    return d
