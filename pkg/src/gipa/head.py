"""Wide & deep prediction head and the multi-label training loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .layer import MLP, glorot, init_mlp
from .tensor import Tensor


@dataclass
class HeadParams:
    deep: MLP          # n -> hidden -> L, with biases
    wide: Tensor       # m x L, no bias

    def named_parameters(self, prefix: str = "head."):
        yield from self.deep.named_parameters(prefix + "deep")
        yield prefix + "wide", self.wide


def init_head(rng: np.random.Generator, n: int, m: int, n_labels: int, hidden: int | None = None) -> HeadParams:
    deep = init_mlp(rng, [n, hidden or n, n_labels])
    return HeadParams(deep, glorot(rng, m, n_labels))


def predict(o_d: Tensor, o_s: Tensor, params: HeadParams) -> Tensor:
    """Raw logits ``Deep(o_d) + o_s @ W_wide``."""
    if o_s.shape[1] != params.wide.shape[0]:
        raise ShapeError(f"wide input width {o_s.shape[1]} != {params.wide.shape[0]}")
    if o_d.shape[0] != o_s.shape[0]:
        raise ShapeError(f"deep and wide inputs disagree on rows: {o_d.shape} vs {o_s.shape}")
    return T.add(params.deep(o_d), T.matmul(o_s, params.wide))


def loss(logits: Tensor, labels, mask) -> Tensor:
    """Mean binary cross-entropy with logits over masked rows and all labels.

    Uses ``softplus(x) - x * y``, which equals ``-y log s(x) - (1-y) log(1-s(x))``
    without overflow for large ``|x|``.
    """
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != logits.shape:
        raise ShapeError(f"labels {y.shape} do not match logits {logits.shape}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (logits.shape[0],):
        raise ShapeError(f"mask shape {mask.shape} does not match {logits.shape[0]} rows")
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        raise ContractError("loss mask selects no rows")
    x = T.gather_rows(logits, rows)
    per_elem = T.sub(T.softplus(x), T.mul(x, Tensor(y[rows])))
    return T.mean_all(per_elem)
