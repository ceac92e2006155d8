"""Training loop, Adam updates, ROC-AUC evaluation and early stopping."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from . import encoding
from . import tensor as T
from .encoding import FeatureEncoder
from .errors import ConfigError, ContractError, DivergenceError, UndefinedAUCError
from .graph import SPLITS, Graph, random_partition
from .head import loss as bce_loss
from .layer import ABLATIONS, ATTENTION_KINDS
from .model import GipaModel, ModelSpec, copy_model, init_model, load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

MAX_DEFAULT_LAYERS = 6


@dataclass
class OptimizerSettings:
    lr: float = 1e-2
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class TrainConfig:
    """Declarative description of one training run.

    No published learning rate, optimiser, epoch budget or hidden sizes
    exist for this model; every default here is this package's own choice.
    """

    layers: int = 6
    hidden: int = 16
    edge_dim: int = 8
    mlp_hidden: int | None = None
    head_hidden: int | None = None
    activation: str = "softplus"
    ablation: str = "full"
    n_buckets: int = 8
    bucket_method: str = "equal_frequency"
    categorical: list[int] = field(default_factory=list)
    partitions: int = 4
    optimizer: OptimizerSettings = field(default_factory=OptimizerSettings)
    max_epochs: int = 200
    patience: int = 50
    eval_interval: int = 1
    seed: int = 0
    allow_deep: bool = False
    dataset: str | None = None
    out: str | None = None

    def validate(self) -> "TrainConfig":
        if self.layers < 1 or (self.layers > MAX_DEFAULT_LAYERS and not self.allow_deep):
            raise ConfigError(f"layers must be in [1, {MAX_DEFAULT_LAYERS}] "
                              f"(set allow_deep to go higher), got {self.layers}")
        if self.activation not in ATTENTION_KINDS:
            raise ConfigError(f"activation must be one of {ATTENTION_KINDS}, got {self.activation!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.bucket_method not in encoding.METHODS:
            raise ConfigError(f"bucket_method must be one of {encoding.METHODS}")
        for name in ("hidden", "edge_dim", "n_buckets", "partitions", "max_epochs",
                     "patience", "eval_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        opt = self.optimizer
        if not opt.lr >= 0 or not math.isfinite(opt.lr):
            raise ConfigError(f"learning rate must be finite and >= 0, got {opt.lr}")
        if not all(0 <= b < 1 for b in opt.betas) or len(opt.betas) != 2:
            raise ConfigError(f"betas must be two values in [0, 1), got {opt.betas}")
        if opt.eps <= 0 or opt.weight_decay < 0:
            raise ConfigError("eps must be > 0 and weight_decay >= 0")
        return self

    def model_spec(self, n_features: int, edge_raw: int, n_labels: int) -> ModelSpec:
        return ModelSpec(n_features, self.n_buckets, edge_raw, n_labels, self.layers, self.hidden,
                         self.edge_dim, self.ablation, self.activation, self.mlp_hidden,
                         self.head_hidden)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def optimizer_step(param: np.ndarray, grad: np.ndarray, state: AdamState,
                   settings: OptimizerSettings) -> np.ndarray:
    """One bias-corrected Adam update followed by decoupled weight decay.

    Returns the new parameter array and advances ``state`` in place.
    """
    if not np.all(np.isfinite(grad)):
        raise DivergenceError("non-finite gradient")
    b1, b2 = settings.betas
    state.t += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1 ** state.t)
    v_hat = state.v / (1.0 - b2 ** state.t)
    new = param - settings.lr * m_hat / (np.sqrt(v_hat) + settings.eps)
    if settings.weight_decay:
        new = new - settings.lr * settings.weight_decay * new
    return new


class Adam:
    def __init__(self, params: list[T.Tensor], settings: OptimizerSettings):
        self.params = params
        self.settings = settings
        self.states = [AdamState(np.zeros_like(p.data), np.zeros_like(p.data)) for p in params]

    def step(self) -> None:
        for p, st in zip(self.params, self.states):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            p.data = optimizer_step(p.data, g, st, self.settings)


# ---------------------------------------------------------------------------
# evaluation


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative, ties
    counting one half, computed from average ranks."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise ContractError(f"{s.size} scores but {y.size} labels")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("ROC-AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass
class EvalResult:
    per_label: np.ndarray        # NaN where the label is single-class in the split
    mean: float
    excluded: list[int]
    loss: float


def fit_encoder(graph: Graph, config: TrainConfig) -> FeatureEncoder:
    """Fit bucket cuts and statistics on the training nodes (edge stats on all edges)."""
    return encoding.fit(graph.node_feat[graph.split_mask("train")], config.n_buckets,
                        config.bucket_method, config.categorical, graph.edge_feat)


def prepare_inputs(graph: Graph, encoder: FeatureEncoder):
    """Encoder outputs for the whole graph: dense, sparse and normalised edge rows."""
    x_dense = encoding.dense_embed(encoder, graph.node_feat).data
    x_sparse = encoding.sparse_embed(encoder, graph.node_feat).data
    if encoder.edge_mean is None:
        edge_norm = np.zeros((graph.n_edges, graph.edge_feat.shape[1]))
    else:
        edge_norm = encoding.normalize_edges(encoder, graph.edge_feat)
    return x_dense, x_sparse, edge_norm


def score_splits(logits: np.ndarray, graph: Graph, splits=SPLITS) -> dict[str, EvalResult]:
    out = {}
    for name in splits:
        rows = graph.split_mask(name)
        if not rows.any():
            continue
        x, y = logits[rows], graph.labels[rows]
        per_label = np.full(y.shape[1], np.nan)
        excluded = []
        for c in range(y.shape[1]):
            try:
                per_label[c] = roc_auc(x[:, c], y[:, c])
            except UndefinedAUCError:
                excluded.append(c)
        valid = per_label[~np.isnan(per_label)]
        mean = float(valid.mean()) if valid.size else float("nan")
        bce = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x))) - x * y
        out[name] = EvalResult(per_label, mean, excluded, float(bce.mean()))
    return out


def full_logits(model: GipaModel, graph: Graph, inputs) -> np.ndarray:
    with T.no_grad():
        return model.forward(graph, *inputs).data


def evaluate(graph: Graph, encoder: FeatureEncoder, checkpoint, split: str,
             inputs=None) -> EvalResult:
    """Whole-graph forward pass, then per-label ROC-AUC over ``split``'s nodes.

    ``checkpoint`` is a model or a checkpoint path. Labels with a single
    class in the split are left out of the mean and listed in ``excluded``.
    """
    if split not in SPLITS:
        raise ContractError(f"unknown split {split!r}")
    if not graph.split_mask(split).any():
        raise ContractError(f"split {split!r} has no nodes")
    model = checkpoint if isinstance(checkpoint, GipaModel) else load_checkpoint(checkpoint)[0]
    if inputs is None:
        inputs = prepare_inputs(graph, encoder)
    return score_splits(full_logits(model, graph, inputs), graph, (split,))[split]


# ---------------------------------------------------------------------------
# training


@dataclass
class RunMetrics:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    valid_auc: list[float] = field(default_factory=list)
    test_auc: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    best_epoch: int = 0
    best_valid_auc: float = float("nan")
    test_at_best: float = float("nan")

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timings."""
        d = dataclasses.asdict(self)
        d.pop("seconds")
        return d


def _fmt(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


def train(graph: Graph, encoder: FeatureEncoder | None, config: TrainConfig,
          out_dir=None, emit: Callable[[dict], None] | None = None) -> tuple[GipaModel, RunMetrics]:
    """Train on ``graph`` and return the best-validation model and its metrics.

    Each epoch re-partitions the nodes at random and takes one optimiser
    step per part. ``emit`` receives one record per split per evaluation.
    With ``out_dir`` set, ``metrics.jsonl``, ``timing.jsonl``, ``encoder.json``
    and ``best.ckpt`` are written there.
    """
    config.validate()
    train_mask = graph.split_mask("train")
    if not train_mask.any():
        raise ContractError("graph has no training nodes")
    if encoder is None:
        encoder = fit_encoder(graph, config)
    inputs = prepare_inputs(graph, encoder)
    x_dense, x_sparse, edge_norm = inputs

    init_ss, part_ss = np.random.SeedSequence(config.seed).spawn(2)
    spec = config.model_spec(encoder.n_features, edge_norm.shape[1], graph.labels.shape[1])
    model = init_model(spec, np.random.default_rng(init_ss))
    part_rng = np.random.default_rng(part_ss)
    opt = Adam(model.parameters(), config.optimizer)

    out = Path(out_dir) if out_dir is not None else None
    metrics_fh = timing_fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        encoding.save(encoder, out / "encoder.json")
        metrics_fh = open(out / "metrics.jsonl", "w")
        timing_fh = open(out / "timing.jsonl", "w")

    metrics = RunMetrics()
    best_model, best_valid, stale = None, -math.inf, 0
    n_parts = min(config.partitions, graph.n_nodes)
    try:
        for epoch in range(1, config.max_epochs + 1):
            t0 = time.perf_counter()
            batch_losses = []
            for sub in random_partition(graph, n_parts, part_rng):
                mask = sub.graph.split_mask("train")
                if not mask.any():
                    continue
                ids, eids = sub.parent_ids, sub.parent_edge_ids
                logits = model.forward(sub.graph, x_dense[ids], x_sparse[ids], edge_norm[eids])
                batch = bce_loss(logits, sub.graph.labels, mask)
                value = batch.item()
                if not math.isfinite(value):
                    T.get_tape().clear()
                    raise DivergenceError(f"non-finite training loss at epoch {epoch}")
                model.zero_grad()
                T.backward(batch)
                opt.step()
                batch_losses.append(value)
            seconds = time.perf_counter() - t0
            train_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")

            if epoch % config.eval_interval and epoch != config.max_epochs:
                continue
            scores = score_splits(full_logits(model, graph, inputs), graph)
            valid = scores["valid"].mean if "valid" in scores else float("nan")
            test = scores["test"].mean if "test" in scores else float("nan")
            metrics.epochs.append(epoch)
            metrics.train_loss.append(train_loss)
            metrics.valid_auc.append(valid)
            metrics.test_auc.append(test)
            metrics.seconds.append(seconds)
            for name, res in scores.items():
                rec = {"epoch": epoch, "split": name, "loss": res.loss, "auc": _fmt(res.mean)}
                if metrics_fh is not None:
                    metrics_fh.write(json.dumps(rec) + "\n")
                if emit is not None:
                    emit({**rec, "seconds": seconds})
            if timing_fh is not None:
                timing_fh.write(json.dumps({"epoch": epoch, "seconds": seconds}) + "\n")
            log.debug("epoch %d loss %.5f valid %.4f test %.4f (%.2fs)", epoch, train_loss,
                      valid, test, seconds)

            if math.isnan(valid) or valid > best_valid:
                best_valid = valid if not math.isnan(valid) else best_valid
                best_model = copy_model(model)
                metrics.best_epoch, metrics.best_valid_auc, metrics.test_at_best = epoch, valid, test
                stale = 0
            else:
                stale += 1
                if stale >= config.patience:
                    log.info("early stop at epoch %d (best %d)", epoch, metrics.best_epoch)
                    break
    finally:
        for fh in (metrics_fh, timing_fh):
            if fh is not None:
                fh.close()

    if out is not None:
        save_checkpoint(best_model, out / "best.ckpt", {"best_epoch": metrics.best_epoch})
    return best_model, metrics
