"""Seed sweeps: ablation comparison and AUC as a function of layer count."""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .graph import Graph
from .layer import ABLATIONS
from .synthetic import SyntheticSpec, generate_synthetic
from .training import TrainConfig, evaluate, fit_encoder, train

log = logging.getLogger(__name__)

GraphSource = Callable[[int], Graph]


@dataclass
class Row:
    label: str
    values: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    @property
    def std(self) -> float:
        return float(np.std(self.values))


def synthetic_source(spec: SyntheticSpec) -> GraphSource:
    """Run seed ``s`` trains on the draw seeded ``spec.seed + s``."""
    cache: dict[int, Graph] = {}

    def get(seed: int) -> Graph:
        if seed not in cache:
            ds, _ = generate_synthetic(dataclasses.replace(spec, seed=spec.seed + seed))
            cache[seed] = ds.to_graph()
        return cache[seed]

    return get


def fixed_source(graph: Graph) -> GraphSource:
    return lambda seed: graph


def run_test_auc(graph: Graph, config: TrainConfig) -> float:
    """Train one run and score its best-validation model on the test split."""
    enc = fit_encoder(graph, config)
    model, _ = train(graph, enc, config)
    return evaluate(graph, enc, model, "test").mean


def seed_row(label: str, source: GraphSource, config: TrainConfig, seeds) -> Row:
    values = []
    for s in seeds:
        auc = run_test_auc(source(s), config.replace(seed=int(s)))
        log.info("%s seed %d test auc %.4f", label, s, auc)
        values.append(auc)
    return Row(label, values)


def ablation_table(source: GraphSource, config: TrainConfig, seeds,
                   modes=ABLATIONS) -> list[Row]:
    return [seed_row(mode, source, config.replace(ablation=mode), seeds) for mode in modes]


def layer_sweep(source: GraphSource, config: TrainConfig, seeds, layers) -> list[Row]:
    return [seed_row(f"K={k}", source, config.replace(layers=int(k)), seeds) for k in layers]


def format_table(rows: list[Row], first: str) -> str:
    width = max([len(first)] + [len(r.label) for r in rows])
    lines = [f"{first:<{width}}  mean_auc  std_auc  n", f"{'-' * width}  --------  -------  -"]
    lines += [f"{r.label:<{width}}  {r.mean:8.4f}  {r.std:7.4f}  {len(r.values)}" for r in rows]
    return "\n".join(lines)
