"""Seeded synthetic graphs whose labels are carried mostly by edge semantics.

Generative model, per label ``l``::

    own_l(i)   = x_i . a_l / sqrt(m)
    neigh_l(i) = sum_{j in N(i)} w_ij * (x_j . b_l / sqrt(m)) / sqrt(avg_degree)
    score_l(i) = (1 - beta) * own_l(i) + beta * neigh_l(i)
    y_l(i)     = [score_l(i) + label_noise * eps > per-label quantile]

The edge weight ``w_ij = tanh(gain * f_ij . r)`` is a hidden signed function
of the edge feature row ``f_ij``. A ``noise_fraction`` of edges are noise
edges: their weight is zero, so the neighbour they bring in is unrelated to
the label, and their features are shifted along a direction ``q``
orthogonal to ``r`` so that an edge-aware model can learn to ignore them.
Because ``E[w] = 0`` whatever the features of the nodes, a model that cannot
see edge features gets nothing out of the neighbour term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Dataset
from .errors import ContractError


@dataclass
class SyntheticSpec:
    n_nodes: int = 2000
    avg_degree: float = 15.0
    n_features: int = 8
    edge_features: int = 4
    n_labels: int = 4
    beta: float = 0.8
    noise_fraction: float = 0.3
    seed: int = 0
    weight_gain: float = 2.0
    noise_shift: float = 2.5
    label_noise: float = 0.3
    positive_rate: float = 0.3
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)

    def validate(self) -> "SyntheticSpec":
        if self.n_nodes < 2:
            raise ContractError(f"n_nodes must be >= 2, got {self.n_nodes}")
        for name in ("avg_degree", "n_features", "n_labels"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.edge_features < 2:
            raise ContractError("edge_features must be >= 2 (signal and noise directions)")
        if not 0.0 <= self.beta <= 1.0:
            raise ContractError(f"beta must lie in [0, 1], got {self.beta}")
        if not 0.0 <= self.noise_fraction < 1.0:
            raise ContractError(f"noise_fraction must lie in [0, 1), got {self.noise_fraction}")
        if not 0.0 < self.positive_rate < 1.0:
            raise ContractError("positive_rate must lie in (0, 1)")
        if len(self.split_fractions) != 3 or abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ContractError("split_fractions must be three numbers summing to 1")
        return self


@dataclass
class SyntheticTruth:
    """Hidden quantities of one draw, kept for oracle computations."""

    own: np.ndarray            # n x L
    neigh: np.ndarray          # n x L
    score: np.ndarray          # n x L, noise-free latent score
    edge_weight: np.ndarray    # per stored (undirected) edge
    is_noise: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(0))


def generate_synthetic(spec: SyntheticSpec) -> tuple[Dataset, SyntheticTruth]:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, m, d, L = spec.n_nodes, spec.n_features, spec.edge_features, spec.n_labels

    # hidden parameters first so they do not depend on graph size
    a = rng.normal(size=(m, L))
    b = rng.normal(size=(m, L))
    basis, _ = np.linalg.qr(rng.normal(size=(d, 2)))
    r, q = basis[:, 0], basis[:, 1]

    x = rng.normal(size=(n, m))
    n_edges = int(round(n * spec.avg_degree / 2))
    src = rng.integers(0, n, size=n_edges)
    dst = (src + rng.integers(1, n, size=n_edges)) % n          # never a self-loop
    feat = rng.normal(size=(n_edges, d))
    is_noise = rng.random(n_edges) < spec.noise_fraction
    feat[is_noise] += spec.noise_shift * q
    weight = np.where(is_noise, 0.0, np.tanh(spec.weight_gain * (feat @ r)))

    own = x @ a / np.sqrt(m)
    content = x @ b / np.sqrt(m)
    neigh = np.zeros((n, L))
    # undirected: both endpoints receive the other's content with the same weight
    np.add.at(neigh, dst, weight[:, None] * content[src])
    np.add.at(neigh, src, weight[:, None] * content[dst])
    neigh /= np.sqrt(spec.avg_degree)
    score = (1.0 - spec.beta) * own + spec.beta * neigh

    noisy = score + spec.label_noise * rng.normal(size=score.shape)
    thresholds = np.quantile(noisy, 1.0 - spec.positive_rate, axis=0)
    labels = (noisy > thresholds).astype(np.float64)

    perm = rng.permutation(n)
    split = np.empty(n, dtype=np.int8)
    n_train = int(round(spec.split_fractions[0] * n))
    n_valid = int(round(spec.split_fractions[1] * n))
    split[perm[:n_train]] = 0
    split[perm[n_train:n_train + n_valid]] = 1
    split[perm[n_train + n_valid:]] = 2

    ds = Dataset(x, src.astype(np.int64), dst.astype(np.int64), feat, labels, split, undirected=True)
    return ds, SyntheticTruth(own, neigh, score, weight, is_noise, thresholds)


def oracle_scores(spec: SyntheticSpec, truth: SyntheticTruth, edge_aware: bool) -> np.ndarray:
    """Bayes-optimal ranking scores for each label.

    The edge-aware oracle knows every edge weight and so ranks by the true
    latent score. The edge-blind oracle knows node features and topology
    only; since the weight has mean zero given those, its best score is the
    node's own term.
    """
    if edge_aware:
        return truth.score
    return (1.0 - spec.beta) * truth.own
