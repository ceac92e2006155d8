"""Dense (z-normalised) and sparse (bucketised one-hot) node encodings.

Each raw feature gets a one-hot block of width ``n_buckets + 1``. The last
slot of every block is reserved for missing values (NaN) and, for
categorical columns, values never seen during fitting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, IngestionError, ShapeError
from .fsutil import atomic_write
from .tensor import Tensor, matmul

STD_FLOOR = 1e-8
SIDECAR_FORMAT = "gipa-feature-encoder"
SIDECAR_VERSION = 1
METHODS = ("equal_width", "equal_frequency")


@dataclass
class FeatureEncoder:
    n_features: int
    n_buckets: int
    method: str
    boundaries: np.ndarray                  # n_features x (n_buckets - 1)
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray                    # features with zero span on the training rows
    categories: dict[int, np.ndarray] = field(default_factory=dict)
    edge_mean: np.ndarray | None = None
    edge_std: np.ndarray | None = None

    @property
    def block_width(self) -> int:
        return self.n_buckets + 1

    @property
    def sparse_width(self) -> int:
        return self.n_features * self.block_width

    def bucketize(self, node_feat) -> np.ndarray:
        """Bucket index per entry; ``n_buckets`` marks the reserved slot."""
        x = _check_columns(node_feat, self.n_features)
        out = np.empty(x.shape, dtype=np.int64)
        for f in range(self.n_features):
            col = x[:, f]
            missing = np.isnan(col)
            if f in self.categories:
                vocab = self.categories[f]
                if vocab.size:
                    pos = np.clip(np.searchsorted(vocab, col), 0, vocab.size - 1)
                    idx = np.where(vocab[pos] == col, pos, self.n_buckets)
                else:
                    idx = np.full(col.shape, self.n_buckets)
            elif self.constant[f]:
                idx = np.zeros(col.shape, dtype=np.int64)
            else:
                # right-open intervals: a value equal to a cut point goes up
                idx = np.searchsorted(self.boundaries[f], col, side="right")
            out[:, f] = np.where(missing, self.n_buckets, idx)
        return out


def _check_columns(node_feat, m: int) -> np.ndarray:
    x = np.asarray(node_feat, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != m:
        raise ShapeError(f"expected a matrix with {m} feature columns, got shape {x.shape}")
    return x


def fit(train_node_feat, n_buckets: int, method: str = "equal_frequency",
        categorical=(), edge_feat=None) -> FeatureEncoder:
    """Fit bucket boundaries and normalisation statistics on training rows.

    ``categorical`` lists column indices treated as category codes: each
    distinct training value gets its own slot (at most ``n_buckets`` of them,
    most frequent first) instead of being cut into intervals.
    """
    x = np.asarray(train_node_feat, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ContractError("cannot fit an encoder on an empty training set")
    if n_buckets < 1:
        raise ContractError(f"n_buckets must be >= 1, got {n_buckets}")
    if method not in METHODS:
        raise ContractError(f"unknown bucketing method {method!r}; expected one of {METHODS}")
    m = x.shape[1]
    boundaries = np.zeros((m, n_buckets - 1))
    mean = np.zeros(m)
    std = np.full(m, STD_FLOOR)
    constant = np.zeros(m, dtype=bool)
    categories: dict[int, np.ndarray] = {}
    cat = {int(c) for c in categorical}
    if any(c < 0 or c >= m for c in cat):
        raise ContractError(f"categorical column index out of range [0, {m})")

    for f in range(m):
        col = x[:, f]
        col = np.sort(col[~np.isnan(col)])
        if col.size:
            # an all-missing column keeps mean 0 and the std floor
            mean[f] = col.mean()
            std[f] = max(col.std(), STD_FLOOR)
        if f in cat:
            vals, counts = np.unique(col, return_counts=True)
            top = np.lexsort((vals, -counts))[:n_buckets]
            categories[f] = np.sort(vals[top])
            continue
        if col.size == 0 or col[0] == col[-1]:
            constant[f] = True
            boundaries[f] = col[0] if col.size else 0.0
            continue
        if method == "equal_width":
            boundaries[f] = np.linspace(col[0], col[-1], n_buckets + 1)[1:-1]
        else:
            # cut at order statistics so bucket k holds floor((k+1)n/K) - floor(kn/K) rows
            pos = (np.arange(1, n_buckets) * col.size) // n_buckets
            boundaries[f] = col[pos]

    enc = FeatureEncoder(m, n_buckets, method, boundaries, mean, std, constant, categories)
    if edge_feat is not None:
        e = np.asarray(edge_feat, dtype=np.float64)
        if e.ndim != 2:
            raise ShapeError(f"edge features must be a matrix, got shape {e.shape}")
        if e.shape[0]:
            enc.edge_mean = e.mean(axis=0)
            enc.edge_std = np.maximum(e.std(axis=0), STD_FLOOR)
        else:
            enc.edge_mean = np.zeros(e.shape[1])
            enc.edge_std = np.ones(e.shape[1])
    return enc


def dense_embed(enc: FeatureEncoder, node_feat) -> Tensor:
    """Per-feature z-score; missing values become 0 (the training mean)."""
    x = _check_columns(node_feat, enc.n_features)
    z = (x - enc.mean) / enc.std
    return Tensor(np.nan_to_num(z, nan=0.0))


def sparse_embed(enc: FeatureEncoder, node_feat) -> Tensor:
    """Concatenated one-hot blocks, one of width ``n_buckets + 1`` per feature."""
    idx = enc.bucketize(node_feat)
    n, m = idx.shape
    w = enc.block_width
    out = np.zeros((n, m * w))
    cols = idx + np.arange(m) * w
    out[np.arange(n)[:, None], cols] = 1.0
    return Tensor(out)


def normalize_edges(enc: FeatureEncoder, raw_edge_feat) -> np.ndarray:
    e = np.asarray(raw_edge_feat, dtype=np.float64)
    if enc.edge_mean is None:
        raise ContractError("encoder was fitted without edge features")
    if e.ndim != 2 or e.shape[1] != enc.edge_mean.size:
        raise ShapeError(f"expected {enc.edge_mean.size} edge feature columns, got shape {e.shape}")
    return (e - enc.edge_mean) / enc.edge_std


def embed_edges(normalized_edge_feat, w_edge: Tensor) -> Tensor:
    """Linear edge embedding ``E x d_e_raw -> E x d_e``, shared by all layers."""
    e = normalized_edge_feat if isinstance(normalized_edge_feat, Tensor) else Tensor(normalized_edge_feat)
    if e.data.ndim != 2 or w_edge.shape[0] != e.shape[1]:
        raise ShapeError(f"edge embedding: features {e.shape} do not fit weight {w_edge.shape}")
    return matmul(e, w_edge)


# ---------------------------------------------------------------------------
# sidecar persistence


def _floats(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def to_dict(enc: FeatureEncoder) -> dict:
    return {
        "format": SIDECAR_FORMAT,
        "version": SIDECAR_VERSION,
        "n_features": enc.n_features,
        "n_buckets": enc.n_buckets,
        "method": enc.method,
        "boundaries": [_floats(r) for r in enc.boundaries],
        "mean": _floats(enc.mean),
        "std": _floats(enc.std),
        "constant": [bool(c) for c in enc.constant],
        "categories": {str(k): _floats(v) for k, v in sorted(enc.categories.items())},
        "edge_mean": None if enc.edge_mean is None else _floats(enc.edge_mean),
        "edge_std": None if enc.edge_std is None else _floats(enc.edge_std),
    }


def from_dict(d: dict) -> FeatureEncoder:
    if d.get("format") != SIDECAR_FORMAT:
        raise IngestionError(f"not a feature encoder sidecar (format={d.get('format')!r})")
    if d.get("version") != SIDECAR_VERSION:
        raise IngestionError(f"unsupported encoder sidecar version {d.get('version')!r}")
    m, k = int(d["n_features"]), int(d["n_buckets"])
    boundaries = np.asarray(d["boundaries"], dtype=np.float64).reshape(m, k - 1)
    opt = lambda v: None if v is None else np.asarray(v, dtype=np.float64)  # noqa: E731
    return FeatureEncoder(
        m, k, d["method"], boundaries,
        np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64),
        np.asarray(d["constant"], dtype=bool),
        {int(c): np.asarray(v, dtype=np.float64) for c, v in d["categories"].items()},
        opt(d.get("edge_mean")), opt(d.get("edge_std")),
    )


def save(enc: FeatureEncoder, path) -> None:
    atomic_write(path, (json.dumps(to_dict(enc), indent=1) + "\n").encode())


def load(path) -> FeatureEncoder:
    with open(path) as fh:
        return from_dict(json.load(fh))
