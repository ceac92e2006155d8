"""YAML run configuration: schema, validation and defaults.

Layout (every key optional, unknown keys rejected)::

    model:     layers, hidden, edge_dim, mlp_hidden, head_hidden,
               activation, ablation, allow_deep
    encoding:  n_buckets, bucket_method, categorical
    training:  partitions, max_epochs, patience, eval_interval, seed,
               optimizer: {lr, betas, eps, weight_decay}
    paths:     dataset, out
    synthetic: SyntheticSpec fields
    sweep:     seeds, layers

No published hyperparameters exist for the full-scale model; every default
below is this package's own choice.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .synthetic import SyntheticSpec
from .training import OptimizerSettings, TrainConfig

SECTIONS = {
    "model": ("layers", "hidden", "edge_dim", "mlp_hidden", "head_hidden", "activation",
              "ablation", "allow_deep"),
    "encoding": ("n_buckets", "bucket_method", "categorical"),
    "training": ("partitions", "max_epochs", "patience", "eval_interval", "seed", "optimizer"),
    "paths": ("dataset", "out"),
}


@dataclass
class SweepSettings:
    seeds: list[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    layers: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    def validate(self) -> "RunConfig":
        self.train.validate()
        try:
            self.synthetic.validate()
        except ValueError as exc:
            raise ConfigError(f"synthetic: {exc}") from exc
        if not self.sweep.seeds or not self.sweep.layers:
            raise ConfigError("sweep.seeds and sweep.layers must be non-empty")
        return self


def _check_type(where: str, value, hint):
    """Coerce ``value`` to ``hint`` or raise; ints are accepted where floats are."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _check_type(where, value, inner[0])
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        if origin is tuple and args and args[-1] is not Ellipsis:
            if len(value) != len(args):
                raise ConfigError(f"{where}: expected {len(args)} items, got {len(value)}")
            return tuple(_check_type(f"{where}[{i}]", v, a) for i, (v, a) in enumerate(zip(value, args)))
        elem = args[0] if args else typing.Any
        out = [_check_type(f"{where}[{i}]", v, elem) for i, v in enumerate(value)]
        return tuple(out) if origin is tuple else out
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _apply(obj, section: str, values, allowed=None):
    if values is None:
        return obj
    if not isinstance(values, dict):
        raise ConfigError(f"{section}: expected a mapping, got {type(values).__name__}")
    hints = typing.get_type_hints(type(obj))
    allowed = allowed if allowed is not None else tuple(hints)
    changes = {}
    for key, value in values.items():
        if key not in allowed:
            raise ConfigError(f"unknown key {section}.{key}; expected one of {sorted(allowed)}")
        if key == "optimizer":
            changes[key] = _apply(OptimizerSettings(), f"{section}.optimizer", value)
        else:
            changes[key] = _check_type(f"{section}.{key}", value, hints[key])
    return dataclasses.replace(obj, **changes)


def from_dict(doc) -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping at the top level")
    known = set(SECTIONS) | {"synthetic", "sweep"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown section(s) {unknown}; expected some of {sorted(known)}")
    tc = TrainConfig()
    for section, keys in SECTIONS.items():
        tc = _apply(tc, section, doc.get(section), keys)
    cfg = RunConfig(tc, _apply(SyntheticSpec(), "synthetic", doc.get("synthetic")),
                    _apply(SweepSettings(), "sweep", doc.get("sweep")))
    return cfg.validate()


def load(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config {p}: {exc}") from exc
    return from_dict(doc)


def to_dict(cfg: RunConfig) -> dict:
    tc = dataclasses.asdict(cfg.train)
    opt = tc.pop("optimizer")
    opt["betas"] = list(opt["betas"])
    doc = {section: {k: tc[k] for k in keys if k != "optimizer"} for section, keys in SECTIONS.items()}
    doc["training"]["optimizer"] = opt
    syn = dataclasses.asdict(cfg.synthetic)
    syn["split_fractions"] = list(syn["split_fractions"])
    doc["synthetic"] = syn
    doc["sweep"] = dataclasses.asdict(cfg.sweep)
    return doc


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)
