"""Dense numpy-backed tensors with tape-based reverse-mode differentiation.

Operations executed inside a ``with Tape() as tape:`` block are recorded
(only when at least one input is a parameter or was itself produced on the
tape). ``backward(tape, loss)`` replays the record in reverse and returns the
gradient of ``loss`` with respect to every parameter tensor.

Outside a tape, the same functions are plain forward computations, which is
what inference uses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

PRECISIONS = {"single": np.float32, "double": np.float64}


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class DegenerateInputError(ValueError):
    """Input is empty or fully masked where that is not allowed."""


class PrecisionError(TypeError):
    """Tensors of different precision were mixed."""


class TapeError(RuntimeError):
    """Misuse of the gradient tape."""


def dtype_for(precision: str) -> type:
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ValueError(f"unknown precision {precision!r}; expected one of {sorted(PRECISIONS)}") from None


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator used for initialization, dropout and shuffling."""
    return np.random.Generator(np.random.PCG64(seed))


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        if dtype is None:
            if isinstance(data, (np.ndarray, np.generic)) and data.dtype in (np.float32, np.float64):
                dtype = data.dtype
            else:
                dtype = np.float32
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self) -> str:
        return "double" if self.data.dtype == np.float64 else "single"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, precision={self.precision}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name, dtype=dtype)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

@dataclass
class _Node:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


_ACTIVE: list["Tape"] = []


class Tape:
    """Ordered record of differentiable operations."""

    def __init__(self):
        self.nodes: list[_Node] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def tracks(self, t: Tensor) -> bool:
        return t.requires_grad or id(t) in self._produced

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], fn) -> None:
        self.nodes.append(_Node(out, inputs, fn))
        self._produced.add(id(out))


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], fn) -> Tensor:
    out = Tensor(out_data)
    tape = active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(out, inputs, fn)
    return out


def backward(tape: Tape, loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Gradients of scalar ``loss`` keyed by parameter tensor.

    With ``params`` given, every listed tensor gets an entry (exact zeros when
    the loss does not depend on it). Otherwise all parameters seen on the tape
    are returned.
    """
    if id(loss) not in tape._produced:
        raise TapeError("loss was not produced on this tape")
    if loss.data.size != 1:
        raise TapeError(f"loss must be a scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.out), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not tape.tracks(t):
                continue
            if t.requires_grad:
                leaves[id(t)] = t
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi

    if params is None:
        params = list(leaves.values())
    return {p: grads.get(id(p), np.zeros_like(p.data)) for p in params}


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _same_precision(*ts: Tensor) -> None:
    dtypes = {t.dtype for t in ts}
    if len(dtypes) > 1:
        raise PrecisionError(f"mixed precision operands: {sorted(str(d) for d in dtypes)}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if not isinstance(a, Tensor):
        a = _const(a, b)
    if not isinstance(b, Tensor):
        b = _const(b, a)
    _same_precision(a, b)
    return a, b


# --------------------------------------------------------------------------
# elementwise
# --------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data + b.data
    except ValueError as e:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}") from e
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data - b.data
    except ValueError as e:
        raise DimensionError(f"cannot subtract shapes {a.shape} and {b.shape}") from e
    return _emit(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    try:
        out = a.data * b.data
    except ValueError as e:
        raise DimensionError(f"cannot multiply shapes {a.shape} and {b.shape}") from e
    return _emit(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def tanh(v: Tensor) -> Tensor:
    y = np.tanh(v.data)
    return _emit(y, (v,), lambda g: (g * (1.0 - y * y),))


def sigmoid(v: Tensor) -> Tensor:
    # tanh form never overflows
    y = 0.5 * (1.0 + np.tanh(0.5 * v.data))
    return _emit(y, (v,), lambda g: (g * y * (1.0 - y),))


def activation(v: Tensor, kind: str) -> Tensor:
    if kind == "tanh":
        return tanh(v)
    if kind == "sigmoid":
        return sigmoid(v)
    raise ValueError(f"unknown activation {kind!r}")


def total(v: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    shape = v.shape
    return _emit(np.asarray(v.data.sum(), dtype=v.dtype), (v,), lambda g: (np.broadcast_to(g, shape).copy(),))


# --------------------------------------------------------------------------
# linear algebra and shape
# --------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; leading axes broadcast as in ``numpy.matmul``."""
    _same_precision(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner extents differ: {a.shape} x {b.shape}")
    out = np.matmul(a.data, b.data)

    def grad(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _emit(out, (a, b), grad)


def reshape(v: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = v.shape
    try:
        out = v.data.reshape(shape)
    except ValueError as e:
        raise DimensionError(f"cannot reshape {old} to {shape}") from e
    return _emit(out, (v,), lambda g: (g.reshape(old),))


def transpose(v: Tensor) -> Tensor:
    """Swap the last two axes."""
    return _emit(np.swapaxes(v.data, -1, -2), (v,), lambda g: (np.swapaxes(g, -1, -2),))


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise DegenerateInputError("concat of an empty part list")
    _same_precision(*parts)
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as e:
        raise DimensionError(f"cannot concat shapes {[p.shape for p in parts]}") from e
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _emit(out, tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis)))


def slice_last(v: Tensor, start: int, stop: int) -> Tensor:
    shape = v.shape

    def grad(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return _emit(v.data[..., start:stop], (v,), grad)


def split(v: Tensor, sizes: Sequence[int]) -> list[Tensor]:
    """Split along the last axis into consecutive pieces of the given sizes."""
    if sum(sizes) != v.shape[-1]:
        raise DimensionError(f"sizes {list(sizes)} do not cover last extent {v.shape[-1]}")
    out, start = [], 0
    for n in sizes:
        out.append(slice_last(v, start, start + n))
        start += n
    return out


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise DegenerateInputError("stack of an empty part list")
    _same_precision(*parts)
    out = np.stack([p.data for p in parts], axis=axis)
    n = len(parts)
    return _emit(
        out,
        tuple(parts),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


def take_rows(v: Tensor, index: np.ndarray) -> Tensor:
    """Select along the first axis (differentiable gather)."""
    index = np.asarray(index, dtype=np.int64)
    shape = v.shape

    def grad(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, index, g)
        return (full,)

    return _emit(v.data[index], (v,), grad)


def embedding(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]``; ``ids`` may have any shape."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for table with {table.shape[0]} rows")
    return take_rows(table, ids)


def pick(v: Tensor, ids) -> Tensor:
    """``out[...] = v[..., ids[...]]`` along the last axis."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.shape != v.shape[:-1]:
        raise DimensionError(f"index shape {ids.shape} does not match {v.shape[:-1]}")
    picked = np.take_along_axis(v.data, ids[..., None], axis=-1)[..., 0]
    shape = v.shape

    def grad(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.put_along_axis(full, ids[..., None], g[..., None], axis=-1)
        return (full,)

    return _emit(picked, (v,), grad)


# --------------------------------------------------------------------------
# normalization
# --------------------------------------------------------------------------

def _masked_logits(v: Tensor, mask, axis: int) -> tuple[np.ndarray, np.ndarray | None]:
    x = v.data
    if mask is None:
        return x, None
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not mask.any(axis=axis).all():
        raise DegenerateInputError("softmax over a fully masked slice")
    return np.where(mask, x, -np.inf), mask


def softmax(v: Tensor, mask=None, axis: int = -1) -> Tensor:
    """Softmax with max-subtraction; masked (False) positions come out exactly 0."""
    if v.shape[axis] == 0:
        raise DegenerateInputError("softmax over an empty axis")
    x, mask = _masked_logits(v, mask, axis)
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)

    def grad(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _emit(y, (v,), grad)


def log_softmax(v: Tensor, mask=None, axis: int = -1) -> Tensor:
    if v.shape[axis] == 0:
        raise DegenerateInputError("log_softmax over an empty axis")
    x, mask = _masked_logits(v, mask, axis)
    shifted = x - x.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def grad(g):
        if mask is not None:
            g = np.where(mask, g, 0.0)
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (v,), grad)


def dropout(v: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout: keep with probability 1-p and scale kept units by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return v
    keep = (rng.random(v.shape) >= p).astype(v.dtype) / v.dtype.type(1.0 - p)
    return mul(v, Tensor(keep))
