"""Attention-based encoder-decoder for question generation.

Three variants share one code path:

* ``sentence``  - bidirectional sentence encoder, bilinear global attention,
  decoder initialised from the sentence summary.
* ``paragraph`` - as ``sentence`` plus a second bidirectional encoder over the
  truncated paragraph; the decoder is initialised from both summaries
  (the Y-shaped network). Attention still only looks at the sentence.
* ``vanilla``   - no attention and a reversed source sequence.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .lstm import ConfigError, EncoderOutput, LstmCellParams, LstmState, bilstm_encode, run_stacked
from .tensor import DimensionError, Tensor
from .vocab import EOS, PAD, SOS

VARIANTS = ("sentence", "paragraph", "vanilla")


@dataclass(frozen=True)
class ModelConfig:
    src_vocab_size: int
    tgt_vocab_size: int
    embed_dim: int = 300
    hidden_size: int = 600
    layers: int = 2
    variant: str = "sentence"
    dropout: float = 0.3

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if min(self.src_vocab_size, self.tgt_vocab_size, self.embed_dim, self.hidden_size, self.layers) < 1:
            raise ConfigError("model dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def attention(self) -> bool:
        return self.variant != "vanilla"

    @property
    def paragraph(self) -> bool:
        return self.variant == "paragraph"

    @property
    def reverse_source(self) -> bool:
        return self.variant == "vanilla"

    @property
    def encoder_width(self) -> int:
        return 2 * self.hidden_size

    @property
    def bridge_input(self) -> int:
        return 2 * self.encoder_width if self.paragraph else self.encoder_width

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BridgeParams:
    """Per decoder layer: tanh-affine maps from the encoder summary to h and c."""

    h_w: list[Tensor]
    h_b: list[Tensor]
    c_w: list[Tensor]
    c_b: list[Tensor]

    @property
    def input_size(self) -> int:
        return self.h_w[0].shape[0]


@dataclass
class StepRecord:
    log_probs: Tensor  # B x V
    attention: Tensor | None = None  # B x S
    argmax: np.ndarray | None = None  # B

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)


@dataclass
class Encoded:
    """Everything the decoder needs about one batch of sources."""

    states: Tensor  # B x S x 2H
    attn_mask: np.ndarray  # B x S, True where attention may look
    init: list[LstmState]
    sentence: EncoderOutput
    paragraph: EncoderOutput | None = None

    def select(self, rows) -> "Encoded":
        rows = np.asarray(rows, dtype=np.int64)
        return Encoded(
            T.take_rows(self.states, rows),
            self.attn_mask[rows],
            [s.select(rows) for s in self.init],
            self.sentence,
            self.paragraph,
        )


# --------------------------------------------------------------------------
# building blocks
# --------------------------------------------------------------------------

def _lift3(x: Tensor) -> Tensor:
    if x.ndim == 1:
        return T.reshape(x, (1, 1, x.shape[0]))
    if x.ndim == 2:
        return T.reshape(x, (x.shape[0], 1, x.shape[1]))
    return x


def _lower(x: Tensor, like_ndim: int) -> Tensor:
    if like_ndim == 1:
        return T.reshape(x, (x.shape[-1],))
    if like_ndim == 2:
        return T.reshape(x, (x.shape[0], x.shape[-1]))
    return x


def attention_weights(h: Tensor, states: Tensor, w_b: Tensor, mask=None) -> Tensor:
    """Bilinear scores ``h^T W_b b_i`` normalised by a masked softmax over i.

    ``h`` is ``H``, ``B x H`` or ``B x T x H``; ``states`` is ``S x D`` or
    ``B x S x D``; the result has ``h``'s leading axes followed by ``S``.
    """
    if h.shape[-1] != w_b.shape[0] or states.shape[-1] != w_b.shape[1]:
        raise DimensionError(f"W_b {w_b.shape} does not fit h {h.shape} and states {states.shape}")
    st = states if states.ndim == 3 else T.reshape(states, (1,) + states.shape)
    scores = T.matmul(T.matmul(_lift3(h), w_b), T.transpose(st))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        mask = mask.reshape((-1, 1, mask.shape[-1]))
    return _lower(T.softmax(scores, mask), h.ndim)


def context_vector(a: Tensor, states: Tensor) -> Tensor:
    """Attention-weighted sum of encoder states."""
    st = states if states.ndim == 3 else T.reshape(states, (1,) + states.shape)
    if a.shape[-1] != st.shape[1]:
        raise DimensionError(f"{a.shape[-1]} weights for {st.shape[1]} states")
    return _lower(T.matmul(_lift3(a), st), a.ndim)


def output_logits(h: Tensor, c: Tensor | None, w_t: Tensor, w_s: Tensor) -> Tensor:
    feat = h if c is None else T.concat([h, c])
    squeeze = feat.ndim == 1
    if squeeze:
        feat = T.reshape(feat, (1, feat.shape[0]))
    logits = T.matmul(T.tanh(T.matmul(feat, w_t)), w_s)
    return T.reshape(logits, (w_s.shape[1],)) if squeeze else logits


def output_distribution(h: Tensor, c: Tensor | None, w_t: Tensor, w_s: Tensor, log: bool = False) -> Tensor:
    """softmax(W_s tanh(W_t [h; c])); ``c=None`` uses ``h`` alone."""
    logits = output_logits(h, c, w_t, w_s)
    return T.log_softmax(logits) if log else T.softmax(logits)


def bridge_init(s: Tensor, s_prime: Tensor | None, bridge: BridgeParams, paragraph: bool = False) -> list[LstmState]:
    if paragraph and s_prime is None:
        raise ConfigError("paragraph variant needs a paragraph summary")
    if not paragraph and s_prime is not None:
        raise ConfigError("sentence variant does not take a paragraph summary")
    x = T.concat([s, s_prime]) if paragraph else s
    if x.shape[-1] != bridge.input_size:
        raise DimensionError(f"bridge expects width {bridge.input_size}, got {x.shape[-1]}")
    return [
        LstmState(T.tanh(T.matmul(x, hw) + hb), T.tanh(T.matmul(x, cw) + cb))
        for hw, hb, cw, cb in zip(bridge.h_w, bridge.h_b, bridge.c_w, bridge.c_b)
    ]


# --------------------------------------------------------------------------
# the model
# --------------------------------------------------------------------------

def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every learnable tensor, in canonical order."""
    e, h = cfg.embed_dim, cfg.hidden_size
    shapes: dict[str, tuple[int, ...]] = {
        "src_emb": (cfg.src_vocab_size, e),
        "tgt_emb": (cfg.tgt_vocab_size, e),
    }

    def stack(prefix: str, input_size: int):
        for layer in range(cfg.layers):
            n_in = input_size if layer == 0 else h
            shapes[f"{prefix}.{layer}.w_x"] = (n_in, 4 * h)
            shapes[f"{prefix}.{layer}.w_h"] = (h, 4 * h)
            shapes[f"{prefix}.{layer}.b"] = (4 * h,)

    stack("enc.fwd", e)
    stack("enc.bwd", e)
    if cfg.paragraph:
        stack("para.fwd", e)
        stack("para.bwd", e)
    stack("dec", e)
    for layer in range(cfg.layers):
        for part in ("h", "c"):
            shapes[f"bridge.{layer}.{part}.w"] = (cfg.bridge_input, h)
            shapes[f"bridge.{layer}.{part}.b"] = (h,)
    if cfg.attention:
        shapes["attn.w_b"] = (h, cfg.encoder_width)
        shapes["out.w_t"] = (h + cfg.encoder_width, h)
    else:
        shapes["out.w_t"] = (h, h)
    shapes["out.w_s"] = (h, cfg.tgt_vocab_size)
    return shapes


class Seq2Seq:
    """Parameters plus the encode / decode computations of one model variant."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor]):
        expected = parameter_shapes(config)
        if list(params) != list(expected):
            missing = set(expected) ^ set(params)
            raise ConfigError(f"parameter set does not match config (differs in {sorted(missing)[:5]})")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise DimensionError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = params
        self.dtype = params["out.w_s"].dtype

        def cells(prefix):
            return [
                LstmCellParams(params[f"{prefix}.{i}.w_x"], params[f"{prefix}.{i}.w_h"], params[f"{prefix}.{i}.b"])
                for i in range(config.layers)
            ]

        self.enc_fwd, self.enc_bwd = cells("enc.fwd"), cells("enc.bwd")
        self.para_fwd = cells("para.fwd") if config.paragraph else None
        self.para_bwd = cells("para.bwd") if config.paragraph else None
        self.dec = cells("dec")
        self.bridge = BridgeParams(
            [params[f"bridge.{i}.h.w"] for i in range(config.layers)],
            [params[f"bridge.{i}.h.b"] for i in range(config.layers)],
            [params[f"bridge.{i}.c.w"] for i in range(config.layers)],
            [params[f"bridge.{i}.c.b"] for i in range(config.layers)],
        )
        self.w_b = params.get("attn.w_b")
        self.w_t = params["out.w_t"]
        self.w_s = params["out.w_s"]

    @classmethod
    def initialize(cls, config: ModelConfig, rng: np.random.Generator, dtype=np.float32,
                   scale: float = 0.1) -> "Seq2Seq":
        """Every tensor uniform in [-scale, scale], drawn in canonical order."""
        params = {
            name: T.parameter(rng.uniform(-scale, scale, size=shape).astype(dtype), name=name)
            for name, shape in parameter_shapes(config).items()
        }
        return cls(config, params)

    @classmethod
    def from_arrays(cls, config: ModelConfig, arrays: dict[str, np.ndarray], dtype=np.float32) -> "Seq2Seq":
        return cls(config, {k: T.parameter(np.array(v, dtype=dtype), name=k) for k, v in arrays.items()})

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    # -- encoding ---------------------------------------------------------

    def _embed_source(self, ids: np.ndarray) -> list[Tensor]:
        table = self.params["src_emb"]
        return [T.embedding(table, ids[:, t]) for t in range(ids.shape[1])]

    def encode(self, src: np.ndarray, src_mask: np.ndarray | None = None, para: np.ndarray | None = None,
               para_mask: np.ndarray | None = None, train: bool = False,
               rng: np.random.Generator | None = None) -> Encoded:
        """Encode a padded ``B x S`` batch of source ids (framed by SOS/EOS).

        Attention is restricted to real sentence tokens: PAD positions and the
        SOS/EOS framing markers get zero weight.
        """
        cfg = self.config
        src = np.atleast_2d(np.asarray(src, dtype=np.int64))
        if src.shape[1] == 0:
            raise T.DegenerateInputError("empty source sequence")
        if src_mask is None:
            src_mask = src != PAD
        if cfg.paragraph and para is None:
            raise ConfigError("paragraph variant needs paragraph ids")
        if not cfg.paragraph and para is not None:
            raise ConfigError(f"{cfg.variant} variant does not take paragraph ids")
        p = cfg.dropout
        sent = bilstm_encode(self.enc_fwd, self.enc_bwd, self._embed_source(src), src_mask, p, train, rng)
        para_out = None
        if cfg.paragraph:
            para = np.atleast_2d(np.asarray(para, dtype=np.int64))
            if para_mask is None:
                para_mask = para != PAD
            para_out = bilstm_encode(self.para_fwd, self.para_bwd, self._embed_source(para), para_mask, p, train, rng)
        init = bridge_init(sent.summary, para_out.summary if para_out else None, self.bridge, cfg.paragraph)
        attn_mask = np.asarray(src_mask, dtype=bool) & (src != SOS) & (src != EOS)
        if cfg.attention and not attn_mask.any(axis=1).all():
            raise T.DegenerateInputError("a source sentence has no tokens besides SOS/EOS")
        return Encoded(sent.states, attn_mask, init, sent, para_out)

    # -- decoding ---------------------------------------------------------

    def decoder_step(self, y_prev, state: list[LstmState], enc: Encoded, train: bool = False,
                     rng: np.random.Generator | None = None) -> tuple[StepRecord, list[LstmState]]:
        """Advance the decoder one token for every row of the batch."""
        y_prev = np.atleast_1d(np.asarray(y_prev, dtype=np.int64))
        if y_prev.min() < 0 or y_prev.max() >= self.config.tgt_vocab_size:
            raise IndexError(f"target token id out of range: {y_prev.tolist()}")
        x = T.embedding(self.params["tgt_emb"], y_prev)
        (h,), new_state = run_stacked(self.dec, [x], self.config.dropout, train, rng, initial=state)
        if not self.config.attention:
            return StepRecord(output_distribution(h, None, self.w_t, self.w_s, log=True)), new_state
        a = attention_weights(h, enc.states, self.w_b, enc.attn_mask)
        c = context_vector(a, enc.states)
        record = StepRecord(output_distribution(h, c, self.w_t, self.w_s, log=True), a, a.data.argmax(axis=-1))
        return record, new_state

    def sequence_log_probs(self, enc: Encoded, tgt_in: np.ndarray, train: bool = False,
                           rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor | None]:
        """Teacher-forced log-distributions, ``B x T x V``, and attention ``B x T x S``.

        Without input feeding the decoder states do not depend on attention,
        so the whole target is run through the LSTM first and the attention
        and output layers are applied to all steps at once.
        """
        tgt_in = np.atleast_2d(np.asarray(tgt_in, dtype=np.int64))
        table = self.params["tgt_emb"]
        inputs = [T.embedding(table, tgt_in[:, t]) for t in range(tgt_in.shape[1])]
        outs, _ = run_stacked(self.dec, inputs, self.config.dropout, train, rng, initial=enc.init)
        hs = T.stack(outs, axis=1)
        if not self.config.attention:
            return output_distribution(hs, None, self.w_t, self.w_s, log=True), None
        a = attention_weights(hs, enc.states, self.w_b, enc.attn_mask)
        c = context_vector(a, enc.states)
        return output_distribution(hs, c, self.w_t, self.w_s, log=True), a
