"""Command-line entry point: ``gipa <command> [flags]``.

Log verbosity comes from the ``GIPA_LOG_LEVEL`` environment variable
(DEBUG, INFO, WARNING, ...; default WARNING). Logs go to stderr; metric
records and tables go to stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import config as config_mod
from . import encoding
from .config import RunConfig
from .dataio import load_dataset, save_dataset
from .errors import ConfigError, GipaError
from .gradcheck import TOLERANCE, run_suite
from .graph import SPLITS
from .harness import ablation_table, fixed_source, format_table, layer_sweep, synthetic_source
from .layer import ABLATIONS, ATTENTION_KINDS
from .model import load_checkpoint
from .synthetic import generate_synthetic
from .training import evaluate, fit_encoder, train

LOG_ENV = "GIPA_LOG_LEVEL"
COMMANDS = ("train", "evaluate", "generate", "encode", "gradcheck", "ablate")

log = logging.getLogger("gipa")


def int_list(text: str) -> list[int]:
    """``"3"``, ``"1,2,4"`` or ``"1-6"``."""
    out: list[int] = []
    try:
        for part in text.split(","):
            if "-" in part.strip()[1:]:
                lo, hi = part.split("-", 1)
                out.extend(range(int(lo), int(hi) + 1))
            else:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer list like 1,2,3 or 1-6, got {text!r}")
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="training seed (synthetic seed for generate)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--dataset", metavar="DIR", help="dataset directory (overrides paths.dataset)")
    common.add_argument("--ablation", choices=ABLATIONS)
    common.add_argument("--layers", type=int_list, metavar="K",
                        help="layer count; a list such as 1-6 runs a sweep")
    common.add_argument("--activation", choices=ATTENTION_KINDS)
    common.add_argument("--seeds", type=int_list, metavar="LIST", help="seed list for sweeps")
    common.add_argument("--print-config", action="store_true",
                        help="print the effective configuration and exit")

    parser = argparse.ArgumentParser(prog="gipa", description="Edge-aware graph attention training")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)
    sub.add_parser("train", parents=[common], help="train a model (or sweep --layers)")
    ev = sub.add_parser("evaluate", parents=[common], help="score a checkpoint")
    ev.add_argument("--checkpoint", required=True, metavar="PATH")
    ev.add_argument("--encoder", metavar="PATH", help="defaults to encoder.json next to the checkpoint")
    ev.add_argument("--split", choices=SPLITS, default="test")
    sub.add_parser("generate", parents=[common], help="write a synthetic dataset")
    sub.add_parser("encode", parents=[common], help="fit and save the feature encoder")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    sub.add_parser("ablate", parents=[common], help="compare the four ablation variants")
    return parser


def effective_config(args) -> RunConfig:
    cfg = config_mod.load(args.config) if args.config else config_mod.from_dict({})
    tc = cfg.train
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.ablation:
        changes["ablation"] = args.ablation
    if args.activation:
        changes["activation"] = args.activation
    if args.layers and len(args.layers) == 1:
        changes["layers"] = args.layers[0]
    if args.out:
        changes["out"] = args.out
    if args.dataset:
        changes["dataset"] = args.dataset
    cfg.train = tc.replace(**changes)
    if args.layers and len(args.layers) > 1:
        cfg.sweep.layers = list(args.layers)
    if args.seeds:
        cfg.sweep.seeds = list(args.seeds)
    return cfg.validate()


def graph_source(cfg: RunConfig):
    if cfg.train.dataset:
        graph, _ = load_dataset(cfg.train.dataset)
        return fixed_source(graph)
    return synthetic_source(cfg.synthetic)


def emit(record: dict) -> None:
    print(json.dumps(record), flush=True)


def cmd_train(args, cfg: RunConfig) -> int:
    tc = cfg.train
    source = graph_source(cfg)
    if args.layers and len(args.layers) > 1:
        seeds = args.seeds or [tc.seed]
        rows = layer_sweep(source, tc, seeds, cfg.sweep.layers)
        print(format_table(rows, "layers"))
        return 0
    graph = source(tc.seed)
    enc = fit_encoder(graph, tc)
    model, metrics = train(graph, enc, tc, out_dir=tc.out, emit=emit)
    test = evaluate(graph, enc, model, "test") if graph.split_mask("test").any() else None
    emit({"best_epoch": metrics.best_epoch, "best_valid_auc": metrics.best_valid_auc,
          "test_auc": None if test is None else test.mean})
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    if not cfg.train.dataset:
        raise GipaError("evaluate needs --dataset or paths.dataset")
    graph, _ = load_dataset(cfg.train.dataset)
    enc_path = Path(args.encoder) if args.encoder else Path(args.checkpoint).parent / "encoder.json"
    enc = encoding.load(enc_path)
    model, _ = load_checkpoint(args.checkpoint)
    res = evaluate(graph, enc, model, args.split)
    emit({"split": args.split, "auc": res.mean, "loss": res.loss,
          "per_label": [None if x != x else x for x in res.per_label.tolist()],
          "excluded": res.excluded})
    return 0


def cmd_generate(args, cfg: RunConfig) -> int:
    if not cfg.train.out:
        raise GipaError("generate needs --out")
    spec = cfg.synthetic
    if args.seed is not None:
        spec.seed = args.seed
    ds, _ = generate_synthetic(spec)
    save_dataset(ds, cfg.train.out)
    emit({"dataset": str(cfg.train.out), "n_nodes": ds.n_nodes, "n_edges": int(ds.src.size)})
    return 0


def cmd_encode(args, cfg: RunConfig) -> int:
    if not cfg.train.out:
        raise GipaError("encode needs --out")
    graph = graph_source(cfg)(cfg.train.seed)
    enc = fit_encoder(graph, cfg.train)
    out = Path(cfg.train.out)
    out.mkdir(parents=True, exist_ok=True)
    encoding.save(enc, out / "encoder.json")
    emit({"encoder": str(out / "encoder.json"), "sparse_width": enc.sparse_width})
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    report = run_suite(cfg.train.seed)
    width = max(len(k) for k in report)
    worst = max(report.values())
    for op, err in report.items():
        print(f"{op:<{width}}  {err:.3e}  {'ok' if err < TOLERANCE else 'FAIL'}")
    print(f"max rel-err {worst:.3e} (tolerance {TOLERANCE:g})")
    return 0 if worst < TOLERANCE else 1


def cmd_ablate(args, cfg: RunConfig) -> int:
    rows = ablation_table(graph_source(cfg), cfg.train, cfg.sweep.seeds)
    print(format_table(rows, "variant"))
    return 0


HANDLERS = {"train": cmd_train, "evaluate": cmd_evaluate, "generate": cmd_generate,
            "encode": cmd_encode, "gradcheck": cmd_gradcheck, "ablate": cmd_ablate}


def main(argv=None) -> int:
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=level if isinstance(logging.getLevelName(level), int) else "WARNING",
                        stream=sys.stderr, format="%(asctime)s %(name)s %(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.print_config:
            sys.stdout.write(config_mod.dump(cfg))
            return 0
        return HANDLERS[args.command](args, cfg)
    except (GipaError, OSError) as exc:
        print(f"gipa {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
