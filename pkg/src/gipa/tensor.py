"""Dense float64 tensors with tape-based reverse-mode differentiation.

Only the handful of operations the model needs are provided. Every op that
touches a tensor with ``requires_grad=True`` appends a record to the active
:class:`Tape`; :func:`backward` replays those records in reverse and then
clears the tape.

Segment reductions accumulate in ascending edge-index order (``np.add.at``
is unbuffered and sequential), so results are bit-reproducible.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError, ShapeError

LEAKY_SLOPE = 0.2
ACTIVATIONS = ("relu", "leaky_relu", "tanh", "softplus", "sigmoid", "identity")


class Tensor:
    """Row-major float64 array that can take part in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.ascontiguousarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def __add__(self, other: Tensor) -> Tensor:
        return add(self, other)

    def __sub__(self, other: Tensor) -> Tensor:
        return sub(self, other)

    def __mul__(self, other: Tensor) -> Tensor:
        return mul(self, other)


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered log of differentiable operations recorded since the last backward."""

    records: list[_Record] = field(default_factory=list)

    def record(self, out, inputs, backward, op) -> None:
        self.records.append(_Record(out, tuple(inputs), backward, op))

    def clear(self) -> None:
        self.records.clear()

    def __len__(self) -> int:
        return len(self.records)


_tape = Tape()
_grad_enabled = True


def get_tape() -> Tape:
    return _tape


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _result(data: np.ndarray, inputs: Sequence[Tensor], backward, op: str) -> Tensor:
    needs = _grad_enabled and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        _tape.record(out, inputs, backward, op)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that feeds ``loss``, then clear the tape.

    Leaf gradients accumulate across calls; callers reset them between steps.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad or len(_tape) == 0:
        raise ContractError("backward() called with an empty tape")
    loss.grad = np.ones_like(loss.data)
    try:
        for rec in reversed(_tape.records):
            g = rec.out.grad
            if g is None:
                continue
            for inp, gi in zip(rec.inputs, rec.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                # grads are never mutated in place, so aliasing gi is safe
                inp.grad = gi if inp.grad is None else inp.grad + gi
    finally:
        _tape.clear()


# ---------------------------------------------------------------------------
# linear algebra and structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        return (g @ bd.T if a.requires_grad else None,
                ad.T @ g if b.requires_grad else None)

    return _result(ad @ bd, (a, b), bw, "matmul")


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    """Lay 2-D parts side by side: ``[r x c1], [r x c2] -> [r x (c1 + c2)]``."""
    if not parts:
        raise ShapeError("concat_rows: no parts given")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.data.ndim != 2 for p in parts):
        raise ShapeError(f"concat_rows: mismatched shapes {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    cuts = np.cumsum([0] + widths)

    def bw(g):
        return [g[:, cuts[k]:cuts[k + 1]] for k in range(len(parts))]

    return _result(np.concatenate([p.data for p in parts], axis=1), parts, bw, "concat_rows")


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")
    ad, bd = a.data, b.data
    if op == "add":
        return _result(ad + bd, (a, b), lambda g: (g, g), "add")
    if op == "sub":
        return _result(ad - bd, (a, b), lambda g: (g, -g), "sub")
    if op == "mul":
        return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")
    raise ValueError(f"unknown elementwise op {op!r}")


def add(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("add", a, b)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("sub", a, b)


def mul(a: Tensor, b: Tensor) -> Tensor:
    return elementwise("mul", a, b)


def add_row(x: Tensor, bias: Tensor) -> Tensor:
    """Add a length-c bias vector to every row of an ``r x c`` tensor."""
    if x.data.ndim != 2 or bias.size != x.shape[1]:
        raise ShapeError(f"add_row: cannot add bias {bias.shape} to {x.shape}")
    bshape = bias.shape

    def bw(g):
        return g, g.sum(axis=0).reshape(bshape)

    return _result(x.data + bias.data.reshape(1, -1), (x, bias), bw, "add_row")


def slice_rows(x: Tensor, start: int, stop: int) -> Tensor:
    """Rows ``start:stop`` of a 2-D tensor (used to split a weight matrix)."""
    if x.data.ndim != 2 or not 0 <= start <= stop <= x.shape[0]:
        raise ShapeError(f"slice_rows: bad range {start}:{stop} for shape {x.shape}")
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        out[start:stop] = g
        return (out,)

    return _result(x.data[start:stop], (x,), bw, "slice_rows")


def gather_rows(x: Tensor, index) -> Tensor:
    """Select rows ``x[index]``; gradients scatter back with repeats summed."""
    idx = np.asarray(index, dtype=np.int64)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows: index out of range for {n} rows")
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _result(x.data[idx], (x,), bw, "gather_rows")


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.array([x.data.sum()]), (x,),
                   lambda g: (np.full(shape, g[0]),), "sum")


def mean_all(x: Tensor) -> Tensor:
    if x.size == 0:
        raise ContractError("mean of an empty tensor")
    shape, n = x.shape, x.size
    return _result(np.array([x.data.mean()]), (x,),
                   lambda g: (np.full(shape, g[0] / n),), "mean")


# ---------------------------------------------------------------------------
# activations


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def activation(kind: str, x: Tensor) -> Tensor:
    """Pointwise nonlinearity; ``kind`` is one of :data:`ACTIVATIONS`."""
    xd = x.data
    if kind == "relu":
        mask = xd > 0
        return _result(np.maximum(xd, 0.0), (x,), lambda g: (g * mask,), kind)
    if kind == "leaky_relu":
        slope = np.where(xd > 0, 1.0, LEAKY_SLOPE)
        return _result(xd * slope, (x,), lambda g: (g * slope,), kind)
    if kind == "tanh":
        y = np.tanh(xd)
        return _result(y, (x,), lambda g: (g * (1.0 - y * y),), kind)
    if kind == "softplus":
        return _result(_softplus(xd), (x,), lambda g: (g * expit(xd),), kind)
    if kind == "sigmoid":
        y = expit(xd)
        return _result(y, (x,), lambda g: (g * y * (1.0 - y),), kind)
    if kind == "identity":
        return _result(xd.copy(), (x,), lambda g: (g,), kind)
    raise ValueError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def relu(x: Tensor) -> Tensor:
    return activation("relu", x)


def softplus(x: Tensor) -> Tensor:
    return activation("softplus", x)


# ---------------------------------------------------------------------------
# segment reductions over edge rows


def _check_segments(segments, n_rows: int, n_segments: int) -> np.ndarray:
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (n_rows,):
        raise ShapeError(f"segments must have one id per row ({n_rows}), got shape {seg.shape}")
    if seg.size and (seg.min() < 0 or seg.max() >= n_segments):
        raise IndexError(f"segment id out of range [0, {n_segments})")
    return seg


def segment_sum(values: Tensor, segments, n_segments: int) -> Tensor:
    """Row ``i`` of the result is the sum of every value row whose segment is ``i``."""
    if values.data.ndim != 2:
        raise ShapeError(f"segment_sum expects a 2-D tensor, got {values.shape}")
    seg = _check_segments(segments, values.shape[0], n_segments)
    out = np.zeros((n_segments, values.shape[1]))
    np.add.at(out, seg, values.data)
    return _result(out, (values,), lambda g: (g[seg],), "segment_sum")


def segment_softmax(logits: Tensor, segments, n_segments: int | None = None) -> Tensor:
    """Softmax over the rows of each segment, independently per column."""
    if logits.data.ndim != 2:
        raise ShapeError(f"segment_softmax expects a 2-D tensor, got {logits.shape}")
    seg0 = np.asarray(segments, dtype=np.int64)
    if n_segments is None:
        n_segments = int(seg0.max()) + 1 if seg0.size else 0
    seg = _check_segments(seg0, logits.shape[0], n_segments)
    x = logits.data
    cols = x.shape[1]
    peak = np.full((n_segments, cols), -np.inf)
    np.maximum.at(peak, seg, x)
    ex = np.exp(x - peak[seg])
    denom = np.zeros((n_segments, cols))
    np.add.at(denom, seg, ex)
    y = ex / denom[seg]

    def bw(g):
        dot = np.zeros((n_segments, cols))
        np.add.at(dot, seg, g * y)
        return (y * (g - dot[seg]),)

    return _result(y, (logits,), bw, "segment_softmax")
