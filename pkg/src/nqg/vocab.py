"""Token/id vocabularies with reserved special tokens."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

PAD, UNK, SOS, EOS = 0, 1, 2, 3
PAD_TOKEN, UNK_TOKEN, SOS_TOKEN, EOS_TOKEN = "<pad>", "<unk>", "<sos>", "<eos>"
RESERVED = (PAD_TOKEN, UNK_TOKEN, SOS_TOKEN, EOS_TOKEN)
MARKER_IDS = frozenset((PAD, SOS, EOS))


class Vocabulary:
    """Bijection between tokens and ids; ids 0..3 are PAD, UNK, SOS, EOS."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[:4]) != RESERVED:
            raise ValueError(f"vocabulary must start with {RESERVED}")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self) -> str:
        return f"Vocabulary(size={len(self)})"

    def id(self, token: str) -> int:
        return self.index.get(token, UNK)

    def token(self, i: int) -> str:
        return self.tokens[i]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.index.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.tokens[i] for i in ids]


def build_vocab(sequences: Iterable[Sequence[str]], cap: int) -> Vocabulary:
    """Reserved tokens, then the ``cap`` most frequent tokens (ties lexicographic)."""
    if cap < 1:
        raise ValueError(f"vocabulary cap must be >= 1, got {cap}")
    counts = Counter(t for seq in sequences for t in seq if t not in RESERVED)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:cap]
    return Vocabulary(list(RESERVED) + [t for t, _ in ranked])


def source_ids(tokens: Sequence[str], vocab: Vocabulary, reverse: bool = False) -> list[int]:
    """Encoder input: SOS, the sentence ids (optionally reversed), EOS."""
    ids = vocab.encode(tokens)
    if reverse:
        ids.reverse()
    return [SOS] + ids + [EOS]
