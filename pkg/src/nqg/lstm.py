"""LSTM cells, stacked runs and bidirectional encoders.

All sequence functions work on batches: a sequence is a list of ``B x D``
tensors, one per time step, and masks are ``B x T`` boolean arrays marking
real (non-padding) positions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import DegenerateInputError, DimensionError, Tensor


class ConfigError(ValueError):
    """Inconsistent model or training configuration."""


@dataclass
class LstmCellParams:
    """Gate weights for one layer; gate order along the 4H axis is i, f, g, o."""

    w_x: Tensor  # input_size x 4H
    w_h: Tensor  # H x 4H
    b: Tensor  # 4H

    def __post_init__(self):
        h4 = self.w_h.shape[1]
        if h4 % 4 or self.w_h.shape[0] * 4 != h4 or self.w_x.shape[1] != h4 or self.b.shape != (h4,):
            raise DimensionError(
                f"inconsistent LSTM weights: w_x {self.w_x.shape}, w_h {self.w_h.shape}, b {self.b.shape}"
            )

    @property
    def input_size(self) -> int:
        return self.w_x.shape[0]

    @property
    def hidden_size(self) -> int:
        return self.w_h.shape[0]

    def tensors(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b": self.b}

    @classmethod
    def initialize(cls, input_size: int, hidden_size: int, rng: np.random.Generator,
                   dtype=np.float32, scale: float = 0.1) -> "LstmCellParams":
        def draw(*shape):
            return T.parameter(rng.uniform(-scale, scale, size=shape).astype(dtype))

        return cls(draw(input_size, 4 * hidden_size), draw(hidden_size, 4 * hidden_size), draw(4 * hidden_size))


@dataclass
class LstmState:
    """Hidden and memory-cell vectors of one layer (``B x H`` each)."""

    h: Tensor
    c: Tensor

    @classmethod
    def zeros(cls, batch: int, hidden: int, dtype=np.float32) -> "LstmState":
        return cls(Tensor(np.zeros((batch, hidden), dtype=dtype)), Tensor(np.zeros((batch, hidden), dtype=dtype)))

    def select(self, rows) -> "LstmState":
        return LstmState(T.take_rows(self.h, rows), T.take_rows(self.c, rows))


@dataclass
class EncoderOutput:
    states: Tensor  # B x T x 2H, each row [forward_t; backward_t]
    summary: Tensor  # B x 2H: [last real forward; first backward]
    mask: np.ndarray  # B x T, True on real tokens
    tokens: list[Tensor]  # the same per-token states, one B x 2H tensor per step


def lstm_cell_step(params: LstmCellParams, x: Tensor, state: LstmState) -> LstmState:
    if x.ndim == 1:
        step = lstm_cell_step(params, _as_batch(x), LstmState(_as_batch(state.h), _as_batch(state.c)))
        n = params.hidden_size
        return LstmState(T.reshape(step.h, (n,)), T.reshape(step.c, (n,)))
    if x.shape[-1] != params.input_size:
        raise DimensionError(f"input width {x.shape[-1]} != cell input size {params.input_size}")
    if state.h.shape[-1] != params.hidden_size or state.c.shape[-1] != params.hidden_size:
        raise DimensionError(f"state width does not match hidden size {params.hidden_size}")
    n = params.hidden_size
    gates = T.matmul(x, params.w_x) + T.matmul(state.h, params.w_h) + params.b
    i, f, g, o = T.split(gates, [n, n, n, n])
    c = T.sigmoid(f) * state.c + T.sigmoid(i) * T.tanh(g)
    h = T.sigmoid(o) * T.tanh(c)
    return LstmState(h, c)


def _as_batch(x: Tensor) -> Tensor:
    return T.reshape(x, (1, x.shape[0])) if x.ndim == 1 else x


def run_stacked(
    layers: list[LstmCellParams],
    inputs: list[Tensor],
    dropout_p: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    initial: list[LstmState] | None = None,
    mask: np.ndarray | None = None,
    reverse: bool = False,
) -> tuple[list[Tensor], list[LstmState]]:
    """Run a multi-layer LSTM over ``inputs``.

    Layer ``l`` consumes the outputs of layer ``l-1``; in train mode inverted
    dropout with a fresh mask per time step is applied to those inter-layer
    activations only. With ``mask``, the state is carried unchanged through
    padded steps, so the final state is the one after the last real token
    (or, with ``reverse=True``, after the first one). Outputs are returned in
    original time order.
    """
    if not 0.0 <= dropout_p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {dropout_p}")
    if not inputs:
        raise DegenerateInputError("empty input sequence")
    for lower, upper in zip(layers, layers[1:]):
        if upper.input_size != lower.hidden_size:
            raise ConfigError(f"layer input size {upper.input_size} != previous hidden size {lower.hidden_size}")
    if train and dropout_p > 0 and rng is None:
        raise ConfigError("train-mode dropout needs an rng")

    batch = inputs[0].shape[0]
    dtype = inputs[0].dtype
    steps = list(range(len(inputs)))
    if reverse:
        steps.reverse()
    step_masks = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (batch, len(inputs)):
            raise DimensionError(f"mask shape {mask.shape} != {(batch, len(inputs))}")
        step_masks = [Tensor(mask[:, t:t + 1].astype(dtype)) for t in range(len(inputs))]

    seq = list(inputs)
    finals = []
    for depth, cell in enumerate(layers):
        if depth > 0 and train and dropout_p > 0:
            seq = [T.dropout(x, dropout_p, rng) for x in seq]
        state = initial[depth] if initial is not None else LstmState.zeros(batch, cell.hidden_size, dtype)
        out: list[Tensor | None] = [None] * len(seq)
        for t in steps:
            new = lstm_cell_step(cell, seq[t], state)
            if step_masks is not None and not mask[:, t].all():
                m = step_masks[t]
                new = LstmState(state.h + m * (new.h - state.h), state.c + m * (new.c - state.c))
            state = new
            out[t] = state.h
        seq = out
        finals.append(state)
    return seq, finals


def bilstm_encode(
    forward: list[LstmCellParams],
    backward: list[LstmCellParams],
    embedded: list[Tensor],
    mask: np.ndarray | None = None,
    dropout_p: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> EncoderOutput:
    """Bidirectional encoding of a (padded) batch of embedded sequences."""
    if not embedded:
        raise DegenerateInputError("cannot encode an empty sequence")
    embedded = [_as_batch(x) for x in embedded]
    batch = embedded[0].shape[0]
    if mask is None:
        mask = np.ones((batch, len(embedded)), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=1).all():
        raise DegenerateInputError("a sequence in the batch has no real tokens")
    step_mask = None if mask.all() else mask
    fwd_out, fwd_final = run_stacked(forward, embedded, dropout_p, train, rng, mask=step_mask)
    bwd_out, _ = run_stacked(backward, embedded, dropout_p, train, rng, mask=step_mask, reverse=True)
    per_token = [T.concat([f, b]) for f, b in zip(fwd_out, bwd_out)]
    summary = T.concat([fwd_final[-1].h, bwd_out[0]])
    return EncoderOutput(T.stack(per_token, axis=1), summary, mask, per_token)
