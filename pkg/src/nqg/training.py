"""Batched negative log-likelihood training with plain SGD.

Targets are framed for teacher forcing: the decoder reads ``[SOS, y1..yn]``
and is scored against ``[y1..yn, EOS]``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from . import tensor as T
from .lstm import ConfigError
from .model import ModelConfig, Seq2Seq, parameter_shapes
from .tensor import DegenerateInputError, Tensor
from .vocab import EOS, PAD, SOS, Vocabulary, build_vocab, source_ids

log = logging.getLogger(__name__)

MAGIC = b"NQG1"
EMBEDDING_POLICIES = ("learned", "fixed-pretrained")


class TrainingDiverged(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    embed_dim: int = 300
    hidden_size: int = 600
    layers: int = 2
    dropout: float = 0.3
    learning_rate: float = 1.0
    halving_start: int = 8
    batch_size: int = 64
    clip: float = 5.0
    max_epochs: int = 15
    precision: str = "single"
    seed: int = 1
    variant: str = "sentence"
    paragraph_len: int = 100
    embedding_policy: str = "fixed-pretrained"
    src_vocab_cap: int = 45000
    tgt_vocab_cap: int = 28000
    init_scale: float = 0.1

    def __post_init__(self):
        positive = ("embed_dim", "hidden_size", "layers", "learning_rate", "halving_start", "batch_size",
                    "clip", "max_epochs", "paragraph_len", "src_vocab_cap", "tgt_vocab_cap", "init_scale")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.halving_start > self.max_epochs:
            raise ConfigError(f"halving_start ({self.halving_start}) must not exceed max_epochs ({self.max_epochs})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.embedding_policy not in EMBEDDING_POLICIES:
            raise ConfigError(f"embedding_policy must be one of {EMBEDDING_POLICIES}")
        T.dtype_for(self.precision)
        ModelConfig(1, 1, variant=self.variant)  # validates the variant name

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainingConfig":
        try:
            base = PRESETS[name]
        except KeyError:
            raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
        return replace(base, **overrides)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def dtype(self):
        return T.dtype_for(self.precision)

    def model_config(self, src_vocab_size: int, tgt_vocab_size: int) -> ModelConfig:
        return ModelConfig(src_vocab_size, tgt_vocab_size, self.embed_dim, self.hidden_size, self.layers,
                           self.variant, self.dropout)


PRESETS = {
    "paper": TrainingConfig(),
    # desk-scale: small enough to memorise a few dozen pairs in seconds
    "toy": TrainingConfig(
        embed_dim=16, hidden_size=32, dropout=0.0, batch_size=8, max_epochs=300, halving_start=300,
        src_vocab_cap=200, tgt_vocab_cap=200, embedding_policy="learned", paragraph_len=30, init_scale=0.3,
    ),
}


# --------------------------------------------------------------------------
# examples and batches
# --------------------------------------------------------------------------

@dataclass
class Example:
    src: list[int]
    tgt: list[int]
    para: list[int] | None = None


def encode_pairs(pairs: Iterable, src_vocab: Vocabulary, tgt_vocab: Vocabulary, variant: str = "sentence",
                 paragraph_len: int = 100) -> list[Example]:
    reverse = variant == "vanilla"
    out = []
    for p in pairs:
        para = None
        if variant == "paragraph":
            para = source_ids(list(p.paragraph or [])[:paragraph_len], src_vocab)
        out.append(Example(source_ids(p.sentence, src_vocab, reverse), tgt_vocab.encode(p.question), para))
    return out


@dataclass
class Batch:
    src: np.ndarray
    src_mask: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_mask: np.ndarray
    para: np.ndarray | None = None
    para_mask: np.ndarray | None = None

    def __len__(self) -> int:
        return self.src.shape[0]


def _pad(seqs: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max(len(s) for s in seqs)
    ids = np.full((len(seqs), width), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        ids[i, :len(s)] = s
    mask = np.zeros_like(ids, dtype=bool)
    for i, s in enumerate(seqs):
        mask[i, :len(s)] = True
    return ids, mask


def make_batch(examples: Sequence[Example]) -> Batch:
    if not examples:
        raise DegenerateInputError("empty batch")
    src, src_mask = _pad([e.src for e in examples])
    tgt_in, _ = _pad([[SOS] + e.tgt for e in examples])
    tgt_out, tgt_mask = _pad([e.tgt + [EOS] for e in examples])
    para = para_mask = None
    if examples[0].para is not None:
        para, para_mask = _pad([e.para for e in examples])
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask, para, para_mask)


def batchify(examples: Sequence[Example], batch_size: int, rng: np.random.Generator | None = None) -> list[Batch]:
    """Split into padded batches; shuffled first when an rng is given."""
    if not examples:
        raise DegenerateInputError("no examples to batch")
    order = rng.permutation(len(examples)) if rng is not None else np.arange(len(examples))
    return [make_batch([examples[i] for i in order[k:k + batch_size]]) for k in range(0, len(order), batch_size)]


# --------------------------------------------------------------------------
# loss and optimisation
# --------------------------------------------------------------------------

@dataclass
class NllLoss:
    total: Tensor  # scalar, summed over real target tokens
    tokens: int

    @property
    def mean(self) -> float:
        return self.total.item() / self.tokens


def nll_loss(log_probs: Tensor, targets, mask) -> NllLoss:
    """``-sum log p(y_j)`` over unmasked target positions."""
    mask = np.asarray(mask, dtype=bool)
    tokens = int(mask.sum())
    if tokens == 0:
        raise DegenerateInputError("no unmasked target tokens")
    picked = T.pick(log_probs, targets)
    weights = Tensor(mask.astype(log_probs.dtype))
    return NllLoss(T.total(picked * weights) * -1.0, tokens)


def model_loss(model: Seq2Seq, batch: Batch, train: bool = False, rng: np.random.Generator | None = None) -> NllLoss:
    enc = model.encode(batch.src, batch.src_mask, batch.para, batch.para_mask, train=train, rng=rng)
    log_probs, _ = model.sequence_log_probs(enc, batch.tgt_in, train=train, rng=rng)
    return nll_loss(log_probs, batch.tgt_out, batch.tgt_mask)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))


def clip_gradients(grads: dict, threshold: float) -> tuple[dict, float]:
    """Rescale all gradients jointly when their global L2 norm exceeds ``threshold``.

    Returns the (possibly rescaled) gradients and the pre-clip norm.
    """
    if threshold <= 0:
        raise ValueError(f"clip threshold must be positive, got {threshold}")
    norm = global_norm(grads.values())
    if norm <= threshold:
        return grads, norm
    scale = threshold / norm
    return {k: (g * scale).astype(g.dtype) for k, g in grads.items()}, norm


def learning_rate(epoch: int, config: TrainingConfig) -> float:
    """Constant until ``halving_start``, then halved every epoch from it on."""
    if epoch < 1:
        raise ValueError("epochs are 1-based")
    return config.learning_rate * 0.5 ** max(0, epoch - (config.halving_start - 1))


def sgd_step(params: dict[str, Tensor], grads: dict, rate: float, frozen: Iterable[str] = ()) -> dict[str, Tensor]:
    """In-place ``theta -= rate * grad``; names in ``frozen`` are left untouched."""
    frozen = set(frozen)
    for name, p in params.items():
        if name in frozen or p not in grads:
            continue
        p.data -= (rate * grads[p]).astype(p.dtype)
    return params


def frozen_parameters(config: TrainingConfig) -> tuple[str, ...]:
    return ("src_emb", "tgt_emb") if config.embedding_policy == "fixed-pretrained" else ()


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

@dataclass
class Checkpoint:
    config: TrainingConfig
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    params: dict[str, np.ndarray]
    epoch: int = 0
    dev_perplexity: float | None = None
    _model: Seq2Seq | None = field(default=None, repr=False, compare=False)

    @property
    def model_config(self) -> ModelConfig:
        return self.config.model_config(len(self.src_vocab), len(self.tgt_vocab))

    def model(self) -> Seq2Seq:
        if self._model is None:
            self._model = Seq2Seq.from_arrays(self.model_config, self.params, self.config.dtype)
        return self._model

    @classmethod
    def from_model(cls, model: Seq2Seq, config: TrainingConfig, src_vocab: Vocabulary, tgt_vocab: Vocabulary,
                   epoch: int = 0, dev_perplexity: float | None = None) -> "Checkpoint":
        return cls(config, src_vocab, tgt_vocab, model.arrays(), epoch, dev_perplexity)

    def to_bytes(self) -> bytes:
        shapes = parameter_shapes(self.model_config)
        manifest, blobs, offset = [], [], 0
        for name, shape in shapes.items():
            blob = np.ascontiguousarray(self.params[name], dtype="<f4").tobytes()
            manifest.append({"name": name, "shape": list(shape), "offset": offset})
            blobs.append(blob)
            offset += len(blob)
        meta = {
            "config": self.config.to_dict(),
            "src_vocab": self.src_vocab.tokens,
            "tgt_vocab": self.tgt_vocab.tokens,
            "tensors": manifest,
            "epoch": self.epoch,
            "dev_perplexity": self.dev_perplexity,
        }
        doc = json.dumps(meta, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
        return MAGIC + struct.pack("<Q", len(doc)) + doc + b"".join(blobs)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Checkpoint":
        if raw[:4] != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        (n,) = struct.unpack("<Q", raw[4:12])
        meta = json.loads(raw[12:12 + n].decode("utf-8"))
        data = memoryview(raw)[12 + n:]
        params = {}
        for entry in meta["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape, dtype=np.int64))
            start = entry["offset"]
            if start + 4 * count > len(data):
                raise CheckpointError(f"tensor {entry['name']} runs past end of file")
            arr = np.frombuffer(data[start:start + 4 * count], dtype="<f4").reshape(shape)
            params[entry["name"]] = arr.astype(np.float32)
        return cls(TrainingConfig.from_dict(meta["config"]), Vocabulary(meta["src_vocab"]),
                   Vocabulary(meta["tgt_vocab"]), params, meta["epoch"], meta["dev_perplexity"])

    def save(self, path: str | os.PathLike) -> None:
        """Atomic write (temporary file in the target directory, then rename)."""
        path = os.fspath(path)
        directory = os.path.dirname(os.path.abspath(path))
        fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
        try:
            with os.fdopen(fd, "wb") as f:
                f.write(self.to_bytes())
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


# --------------------------------------------------------------------------
# evaluation and the training loop
# --------------------------------------------------------------------------

def corpus_nll(model: Seq2Seq, examples: Sequence[Example], batch_size: int = 64) -> tuple[float, int]:
    """Total NLL and target-token count (EOS included), eval mode."""
    if not examples:
        raise DegenerateInputError("no pairs to score")
    total, tokens = 0.0, 0
    for batch in batchify(examples, batch_size):
        res = model_loss(model, batch)
        total += res.total.item()
        tokens += res.tokens
    return total, tokens


def _exp_mean(total: float, tokens: int) -> float:
    mean = total / tokens
    return math.exp(mean) if mean < 700 else math.inf


def perplexity(checkpoint: Checkpoint, pairs: Sequence, batch_size: int | None = None) -> float:
    cfg = checkpoint.config
    examples = encode_pairs(pairs, checkpoint.src_vocab, checkpoint.tgt_vocab, cfg.variant, cfg.paragraph_len)
    total, tokens = corpus_nll(checkpoint.model(), examples, batch_size or cfg.batch_size)
    return _exp_mean(total, tokens)


def build_vocabularies(pairs: Sequence, config: TrainingConfig) -> tuple[Vocabulary, Vocabulary]:
    src_seqs = [p.sentence for p in pairs]
    if config.variant == "paragraph":
        src_seqs += [list(p.paragraph or [])[:config.paragraph_len] for p in pairs]
    return build_vocab(src_seqs, config.src_vocab_cap), build_vocab([p.question for p in pairs], config.tgt_vocab_cap)


def train(
    config: TrainingConfig,
    train_pairs: Sequence,
    dev_pairs: Sequence,
    src_vocab: Vocabulary | None = None,
    tgt_vocab: Vocabulary | None = None,
    src_embeddings: np.ndarray | None = None,
    tgt_embeddings: np.ndarray | None = None,
    on_epoch: Callable[[dict], None] | None = None,
    stop_loss: float | None = None,
) -> tuple[Checkpoint, list[dict]]:
    """Train for ``config.max_epochs`` epochs and keep the lowest-dev-perplexity model.

    ``stop_loss`` ends training early once an epoch's mean per-token training
    NLL drops below it. Returns the best checkpoint and one log record per
    epoch (``epoch``, ``loss``, ``perplexity``, ``rate``).
    """
    if not train_pairs:
        raise DegenerateInputError("no training pairs")
    if not dev_pairs:
        raise DegenerateInputError("no dev pairs")
    if src_vocab is None or tgt_vocab is None:
        built = build_vocabularies(train_pairs, config)
        src_vocab = src_vocab or built[0]
        tgt_vocab = tgt_vocab or built[1]

    rng = T.make_rng(config.seed)
    model = Seq2Seq.initialize(config.model_config(len(src_vocab), len(tgt_vocab)), rng, config.dtype,
                               config.init_scale)
    for name, table in (("src_emb", src_embeddings), ("tgt_emb", tgt_embeddings)):
        if table is not None:
            if table.shape != model.params[name].shape:
                raise ConfigError(f"{name}: embedding shape {table.shape} != {model.params[name].shape}")
            model.params[name].data[...] = table
    if config.embedding_policy == "fixed-pretrained" and src_embeddings is None and tgt_embeddings is None:
        log.warning("embedding_policy is fixed-pretrained but no embeddings were given; embeddings stay at random init")
    frozen = frozen_parameters(config)
    trainable = [p for name, p in model.params.items() if name not in frozen]

    train_ex = encode_pairs(train_pairs, src_vocab, tgt_vocab, config.variant, config.paragraph_len)
    dev_ex = encode_pairs(dev_pairs, src_vocab, tgt_vocab, config.variant, config.paragraph_len)

    history: list[dict] = []
    best: Checkpoint | None = None
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        rate = learning_rate(epoch, config)
        epoch_loss, epoch_tokens = 0.0, 0
        for batch_id, batch in enumerate(batchify(train_ex, config.batch_size, rng)):
            step += 1
            with T.Tape() as tape:
                res = model_loss(model, batch, train=True, rng=rng)
                objective = res.total * (1.0 / len(batch))
            value = res.total.item()
            if not math.isfinite(value):
                raise TrainingDiverged(f"non-finite loss {value} at step {step} (epoch {epoch}, batch {batch_id})")
            grads = T.backward(tape, objective, trainable)
            grads, _ = clip_gradients(grads, config.clip)
            sgd_step(model.params, grads, rate, frozen)
            epoch_loss += value
            epoch_tokens += res.tokens

        dev_total, dev_tokens = corpus_nll(model, dev_ex, config.batch_size)
        if not math.isfinite(dev_total):
            raise TrainingDiverged(f"non-finite dev loss after epoch {epoch} (step {step})")
        dev_ppl = _exp_mean(dev_total, dev_tokens)
        record = {"epoch": epoch, "loss": epoch_loss / epoch_tokens, "perplexity": dev_ppl, "rate": rate}
        history.append(record)
        log.info("epoch %d loss %.4f dev ppl %.3f rate %g", epoch, record["loss"], dev_ppl, rate)
        if on_epoch is not None:
            on_epoch(record)
        if best is None or dev_ppl < best.dev_perplexity:
            best = Checkpoint.from_model(model, config, src_vocab, tgt_vocab, epoch, dev_ppl)
        if stop_loss is not None and record["loss"] < stop_loss:
            break
    return best, history
