"""Small model and vocabulary builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from nqg import tensor as T
from nqg.model import Seq2Seq
from nqg.training import Checkpoint, TrainingConfig
from nqg.vocab import PAD, RESERVED, SOS, Vocabulary

SOURCE_WORDS = ["the", "eldon", "square", "is", "in", "newcastle", "built", "by", "grainger", "."]


def random_checkpoint(seed: int, target_words=("what", "where"), variant: str = "sentence", hidden: int = 8,
                      embed: int = 8, layers: int = 1, scale: float = 1.0, precision: str = "double") -> Checkpoint:
    """Untrained checkpoint with uniform(-scale, scale) weights; |U| = 4 + len(target_words)."""
    cfg = TrainingConfig(embed_dim=embed, hidden_size=hidden, layers=layers, dropout=0.0, precision=precision,
                         variant=variant, embedding_policy="learned", seed=seed)
    src_vocab = Vocabulary(list(RESERVED) + SOURCE_WORDS)
    tgt_vocab = Vocabulary(list(RESERVED) + list(target_words))
    model = Seq2Seq.initialize(cfg.model_config(len(src_vocab), len(tgt_vocab)), T.make_rng(seed), cfg.dtype, scale)
    return Checkpoint.from_model(model, cfg, src_vocab, tgt_vocab)


def random_sentence(rng: np.random.Generator, low: int = 2, high: int = 6) -> list[str]:
    n = int(rng.integers(low, high + 1))
    return [SOURCE_WORDS[i] for i in rng.integers(0, len(SOURCE_WORDS), size=n)]


def teacher_forced_scorer(model, src, para=None):
    """score(seq) = sum of log p(y_t | y_<t, source), computed by one full-sequence pass."""
    enc = model.encode(np.array([src]), para=None if para is None else np.array([para]))

    def score(seq):
        lp, _ = model.sequence_log_probs(enc, np.array([[SOS] + list(seq[:-1])]))
        return float(sum(lp.data[0, t, y] for t, y in enumerate(seq)))

    return score


def decodable_ids(vocab_size: int) -> list[int]:
    return [i for i in range(vocab_size) if i not in (PAD, SOS)]


def random_corpus(rng: np.random.Generator, size: int, refs=(1, 3), length=(1, 8), words="abcde"):
    """Hypotheses and reference groups over a small alphabet; ranges are half-open."""
    hyps, refs_list = [], []
    for _ in range(size):
        hyps.append([str(w) for w in rng.choice(list(words), rng.integers(*length))])
        refs_list.append([[str(w) for w in rng.choice(list(words), rng.integers(*length))]
                          for _ in range(rng.integers(*refs))])
    return hyps, refs_list
