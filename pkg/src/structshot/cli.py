#!/usr/bin/env python3
"""Command-line entry point for structshot.

Usage:
    structshot generate-data --out PATH [--classes N] [--per-class N] [--seed S]
    structshot train --out CKPT [--config PATH] [--dataset PATH] [--variant V] [...]
    structshot eval --checkpoint CKPT [--dataset PATH] [--tasks N] [--seed S] [--out REPORT]
    structshot grad-check [--seed S] [--points N] [--only PREFIX]
    structshot stats --dataset PATH
    structshot inspect --checkpoint CKPT [--dataset PATH] [--graph-id ID]

Examples:
    # Ten triangle-count classes, 50 graphs each (6 train, 4 test)
    structshot generate-data --classes 10 --per-class 50 --seed 1 --out data/triangles.jsonl

    # Train the global-attention variant with self-attention
    structshot train --dataset data/triangles.jsonl --variant g --global-attn self --out run/g.npz

    # Settings from a file, one flag overriding it
    structshot train --config run.conf --iterations 200 --out run/short.npz

    # 500 3-way 5-shot test tasks, report as JSON
    structshot eval --checkpoint run/g.npz --tasks 500 --out run/g-report.json

    # Verify every gradient against finite differences
    structshot grad-check --seed 7

    # Which encoder depths and substructures a trained model weights
    structshot inspect --checkpoint run/full.npz --graph-id tri07-0003
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from structshot.attention import KINDS, POOLINGS
from structshot.checkpoint import load_checkpoint, save_checkpoint
from structshot.config import build_config
from structshot.errors import DatasetError, StructshotError
from structshot.fusion import VARIANTS, layer_weights
from structshot.gradsuite import DEFAULT_POINTS, GRAD_TOLERANCE, run_grad_suite
from structshot.graphs import DEFAULT_DEGREE_CAP, SPLITS, dataset_stats, parse_dataset, write_dataset
from structshot.synthetic import (
    DEFAULT_EDGE_PROB,
    DEFAULT_NODE_RANGE,
    generate_triangles_dataset,
)
from structshot.trainer import evaluate, load_dataset, train

logger = logging.getLogger("structshot")

# RunConfig keys settable from the command line; dest names match the config keys
RUN_FLAGS = (
    "dataset", "variant", "global_attn", "local_attn", "n", "k", "q", "seed", "pooling",
    "heads", "attn_layers", "attn_depth", "hidden_dim", "num_layers", "learning_rate",
    "iterations", "validate_every", "eval_tasks", "tasks_per_iteration", "val_tasks",
    "num_substructures", "workers", "holdout_per_class", "degree_cap", "log_every",
)  # fmt: skip


def setup_logging(debug: bool = False, log_file: str | None = None) -> None:
    """Attach console (and optional file) handlers to the shared logger once."""
    if logger.handlers:
        return
    debug = debug or bool(os.environ.get("STRUCTSHOT_DEBUG"))
    logger.setLevel(logging.DEBUG if debug else logging.INFO)
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(
        logging.Formatter("%(asctime)s [%(levelname)s] %(message)s", datefmt="%H:%M:%S")
    )
    logger.addHandler(console_handler)
    if log_file:
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(logging.Formatter("%(asctime)s │ %(message)s", datefmt="%H:%M:%S"))
        logger.addHandler(file_handler)


def _overrides(args) -> dict:
    values = {key: getattr(args, key, None) for key in RUN_FLAGS}
    if getattr(args, "layers_used", None):
        values["layers_used"] = tuple(int(x) for x in args.layers_used.split(","))
    if getattr(args, "no_progress", False):
        values["progress"] = False
    if getattr(args, "epsilon_floor", False):
        values["epsilon_floor"] = True
    if getattr(args, "learn_eps", False):
        values["learn_eps"] = True
    if getattr(args, "no_l2", False):
        values["l2_normalize"] = False
    return values


def _write_or_print(text: str, out: str | None) -> None:
    if out:
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(f"Wrote {path}")
    else:
        print(text, end="")


def cmd_generate_data(args):
    """Generate a triangle-count dataset."""
    low, high = args.min_nodes, args.max_nodes
    dataset = generate_triangles_dataset(
        num_classes=args.classes,
        graphs_per_class=args.per_class,
        node_range=(low, high),
        edge_prob=args.edge_prob,
        seed=args.seed,
        train_classes=args.train_classes,
        validation_classes=args.validation_classes,
        degree_cap=args.degree_cap,
    )
    write_dataset(dataset, args.out)
    counts = ", ".join(f"{name}={len(dataset.graphs(name))}" for name in SPLITS)
    print(f"Wrote {len(dataset.all_graphs())} graphs to {args.out} ({counts})")
    return 0


def cmd_train(args):
    """Train a model and write its checkpoint."""
    config = build_config(args.config, _overrides(args))
    checkpoint = train(config)
    save_checkpoint(checkpoint, args.out)
    best = checkpoint.best_val_acc
    print(
        f"Trained {config.variant} for {len(checkpoint.loss_trace)} steps"
        + (f", best validation accuracy {best:.4f}" if best is not None else "")
        + f"; checkpoint at {args.out}"
    )
    return 0


def _checkpoint_with_overrides(args):
    checkpoint = load_checkpoint(args.checkpoint)
    changes = {"dataset": args.dataset, "workers": getattr(args, "workers", None)}
    if getattr(args, "no_progress", False):
        changes["progress"] = False
    checkpoint.config = checkpoint.config.with_overrides(changes)
    return checkpoint


def cmd_eval(args):
    """Evaluate a checkpoint on seeded test episodes."""
    checkpoint = _checkpoint_with_overrides(args)
    dataset = load_dataset(checkpoint.config)
    graphs = dataset.graphs(args.split)
    if not graphs:
        raise DatasetError(f"dataset has no {args.split} graphs")
    report = evaluate(checkpoint, graphs, num_tasks=args.tasks, seed=args.seed)
    _write_or_print(report.to_json(), args.out)
    return 0


def cmd_grad_check(args):
    """Check reverse-mode gradients against central differences."""
    results = run_grad_suite(seed=args.seed, points=args.points, only=args.only)
    if not results:
        raise StructshotError(f"no grad-check cases match {args.only!r}")
    for result in results:
        status = "ok" if result.passed else "FAIL"
        print(f"{result.name:<28} {result.max_error:.3e}  {status}")
    worst = max(r.max_error for r in results)
    print(f"max relative error: {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    return 0 if worst < GRAD_TOLERANCE else 1


def cmd_stats(args):
    """Print per-split dataset statistics."""
    dataset = parse_dataset(args.dataset, degree_cap=args.degree_cap)
    print(json.dumps(dataset_stats(dataset), indent=2, sort_keys=True))
    return 0


def cmd_inspect(args):
    """Print attention weights of a trained model for dataset graphs."""
    checkpoint = _checkpoint_with_overrides(args)
    config = checkpoint.config
    dataset = load_dataset(config)
    graphs = dataset.all_graphs()
    if args.graph_id:
        graphs = tuple(g for g in graphs if g.id == args.graph_id)
        if not graphs:
            raise DatasetError(f"no graph with id {args.graph_id!r}")
    variant = config.model_variant()
    out = {
        g.id: [
            {"branch": variant.branches[i].label, **layer_weights(g, variant, checkpoint.params, i)}
            for i in range(len(variant.branches))
        ]
        for g in graphs
    }
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file; flags override it")
    p.add_argument("--dataset", help="JSON-lines dataset path")
    p.add_argument("--variant", choices=VARIANTS, help="base | g | l | full | ensemble")
    p.add_argument("--global-attn", dest="global_attn", choices=KINDS, help="Global attention kind")
    p.add_argument("--local-attn", dest="local_attn", choices=KINDS, help="Local attention kind")
    p.add_argument("--n", type=int, help="Classes per episode (N-way)")
    p.add_argument("--k", type=int, help="Support graphs per class (K-shot)")
    p.add_argument("--q", type=int, help="Query graphs per class")
    p.add_argument("--seed", type=int, help="Seed for initialization, episodes and substructures")
    p.add_argument("--pooling", choices=POOLINGS, help="Pooling for self/transformer attention")
    p.add_argument("--heads", type=int, help="Attention heads")
    p.add_argument("--attn-layers", dest="attn_layers", type=int, help="Self/transformer layers")
    p.add_argument("--attn-depth", dest="attn_depth", type=int, help="MLP attention depth")
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int, help="Encoder width")
    p.add_argument("--num-layers", dest="num_layers", type=int, help="GIN layers")
    p.add_argument("--layers-used", dest="layers_used", help="Comma-separated 1-based layers, e.g. 2,3,4,5")
    p.add_argument("--learning-rate", dest="learning_rate", type=float, help="Adam learning rate")
    p.add_argument("--iterations", type=int, help="Optimizer steps")
    p.add_argument("--validate-every", dest="validate_every", type=int, help="Steps between validations")
    p.add_argument("--eval-tasks", dest="eval_tasks", type=int, help="Default task count for eval")
    p.add_argument("--tasks-per-iteration", dest="tasks_per_iteration", type=int, help="Episodes per step")
    p.add_argument("--val-tasks", dest="val_tasks", type=int, help="Episodes per validation")
    p.add_argument("--num-substructures", dest="num_substructures", type=int, help="Substructures per graph")
    p.add_argument("--workers", type=int, help="Threads for evaluation episodes")
    p.add_argument("--holdout-per-class", dest="holdout_per_class", type=int, help="Validation holdout size")
    p.add_argument("--degree-cap", dest="degree_cap", type=int, help="Degree one-hot width")
    p.add_argument("--log-every", dest="log_every", type=int, help="Steps between loss log lines")
    p.add_argument("--learn-eps", action="store_true", help="Train the GIN epsilon")
    p.add_argument("--epsilon-floor", action="store_true", help="Clamp zero-norm centered embeddings")
    p.add_argument("--no-l2", action="store_true", help="Center embeddings without L2 scaling")
    p.add_argument("--no-progress", action="store_true", help="Disable the progress bar")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structshot",
        description="Few-shot graph classification with structure-aware GIN embeddings",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("--debug", action="store_true", help="Debug logging and full stack traces")
    parser.add_argument("--log-file", help="Also write log lines to this file")

    subparsers = parser.add_subparsers(dest="command")

    # generate-data
    p_gen = subparsers.add_parser("generate-data", help="Generate a triangle-count dataset")
    p_gen.add_argument("--out", required=True, help="Output JSON-lines path")
    p_gen.add_argument("--classes", type=int, default=10, help="Triangle-count classes 1..N (default: 10)")
    p_gen.add_argument("--per-class", type=int, default=50, help="Graphs per class (default: 50)")
    p_gen.add_argument("--seed", type=int, default=0, help="Generator seed (default: 0)")
    p_gen.add_argument("--min-nodes", type=int, default=DEFAULT_NODE_RANGE[0], help="Smallest graph")
    p_gen.add_argument("--max-nodes", type=int, default=DEFAULT_NODE_RANGE[1], help="Largest graph")
    p_gen.add_argument("--edge-prob", type=float, default=DEFAULT_EDGE_PROB, help="Edge probability")
    p_gen.add_argument("--train-classes", type=int, help="Classes assigned to train (default: 60%%)")
    p_gen.add_argument("--validation-classes", type=int, default=0, help="Classes assigned to validation")
    p_gen.add_argument("--degree-cap", type=int, default=DEFAULT_DEGREE_CAP, help="Degree one-hot width")
    p_gen.set_defaults(func=cmd_generate_data)

    # train
    p_train = subparsers.add_parser("train", help="Train a model")
    _add_run_flags(p_train)
    p_train.add_argument("--out", required=True, help="Checkpoint path (.npz)")
    p_train.set_defaults(func=cmd_train)

    # eval
    p_eval = subparsers.add_parser("eval", help="Evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True, help="Checkpoint path")
    p_eval.add_argument("--dataset", help="Dataset path (default: the one trained on)")
    p_eval.add_argument("--split", choices=SPLITS, default="test", help="Split to sample tasks from")
    p_eval.add_argument("--tasks", type=int, help="Number of tasks (default: eval_tasks from config)")
    p_eval.add_argument("--seed", type=int, help="Episode seed (default: training seed)")
    p_eval.add_argument("--workers", type=int, help="Threads for evaluation episodes")
    p_eval.add_argument("--no-progress", action="store_true", help="Disable the progress bar")
    p_eval.add_argument("--out", help="Report path (default: stdout)")
    p_eval.set_defaults(func=cmd_eval)

    # grad-check
    p_grad = subparsers.add_parser("grad-check", help="Verify gradients by finite differences")
    p_grad.add_argument("--seed", type=int, default=0, help="Seed (default: 0)")
    p_grad.add_argument("--points", type=int, default=DEFAULT_POINTS, help="Random points per case")
    p_grad.add_argument("--only", help="Only cases whose name starts with this, e.g. attention:")
    p_grad.set_defaults(func=cmd_grad_check)

    # stats
    p_stats = subparsers.add_parser("stats", help="Per-split dataset statistics")
    p_stats.add_argument("--dataset", required=True, help="Dataset path")
    p_stats.add_argument("--degree-cap", type=int, default=DEFAULT_DEGREE_CAP, help="Degree one-hot width")
    p_stats.set_defaults(func=cmd_stats)

    # inspect
    p_inspect = subparsers.add_parser("inspect", help="Show learned attention weights")
    p_inspect.add_argument("--checkpoint", required=True, help="Checkpoint path")
    p_inspect.add_argument("--dataset", help="Dataset path (default: the one trained on)")
    p_inspect.add_argument("--graph-id", help="Only this graph")
    p_inspect.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        print("\nUse -h or --help with any command for more details.")
        return 1

    setup_logging(args.debug, args.log_file)
    try:
        return args.func(args)
    except (StructshotError, OSError) as e:
        if args.debug:
            raise
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
