"""Command-line entry points.

Subcommands: dataset, train, generate, evaluate, bench. Reports are
key=value lines, curves are CSV, and optional --figures directories get
matplotlib renderings of the same numbers. Exit codes: 0 success,
1 usage error, 2 validation error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .config import default_config, load_config_file, render_config
from .datasets import (
    build_community_small_dataset,
    load_graph_file,
    read_metadata,
    sample_size,
    save_graph_file,
    split_dataset,
    DatasetSpec,
)
from .errors import NumericError, UsageError, ValidationError
from .metrics import (
    complexity_curve,
    evaluate_graph_sets,
    molecule_metrics,
    two_community_fraction,
)
from .training import (
    evaluate_tokenizer,
    load_tokenizer_checkpoint,
    load_transformer_checkpoint,
    save_tokenizer_checkpoint,
    save_transformer_checkpoint,
    train_tokenizer,
    train_transformer,
)
from .transformer import generate_graph

DATA_DIR_ENV = "SCALEGRAPH_DATA_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def resolve_path(path: str) -> str:
    """Bare relative paths live under $SCALEGRAPH_DATA_DIR when it is set;
    absolute paths and ./-prefixed paths are taken literally."""
    if not path:
        return path
    if os.path.isabs(path) or path.startswith(("./", "../")):
        return path
    base = os.environ.get(DATA_DIR_ENV)
    return os.path.join(base, path) if base else path


def _load_cfg(args):
    cfg = load_config_file(args.config) if args.config else default_config()
    if getattr(args, "seed", None) is not None:
        cfg.dataset.seed = args.seed
    return cfg


def _write_report(path, pairs):
    lines = [f"{k}={v}" for k, v in pairs]
    text = "\n".join(lines) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)


def cmd_dataset(args) -> int:
    cfg = _load_cfg(args)
    if args.count is not None:
        cfg.dataset.count = args.count
    if cfg.dataset.name != "community_small":
        raise UsageError(
            f"unknown dataset {cfg.dataset.name!r}; this builder only knows community_small"
        )
    graphs = build_community_small_dataset(
        count=cfg.dataset.count,
        rng_seed=cfg.dataset.seed,
        min_nodes=cfg.dataset.min_nodes,
        max_nodes=cfg.dataset.max_nodes,
        p_intra=cfg.dataset.community_p_intra,
        p_inter=cfg.dataset.community_p_inter,
    )
    out = resolve_path(args.out)
    save_graph_file(
        out,
        graphs,
        metadata={
            "generator": "community_small",
            "count": cfg.dataset.count,
            "seed": cfg.dataset.seed,
            "min_nodes": cfg.dataset.min_nodes,
            "max_nodes": cfg.dataset.max_nodes,
            "p_intra": cfg.dataset.community_p_intra,
            "p_inter": cfg.dataset.community_p_inter,
        },
    )
    _write_report(None, [("written", out), ("graphs", len(graphs))])
    return 0


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    if args.epochs is not None:
        cfg.optim.epochs = args.epochs
    data_path = resolve_path(args.data)
    pairs = load_graph_file(data_path, molecular=cfg.dataset.molecular)
    graphs = [g for g, _ in pairs]
    labels = [lab for _, lab in pairs]
    spec = DatasetSpec(
        name=cfg.dataset.name,
        split_fraction=cfg.dataset.split_fraction,
        rng_seed=cfg.dataset.seed,
        class_count=cfg.dataset.class_count,
    )
    train_idx, test_idx = split_dataset(graphs, spec)
    train_graphs = [graphs[i] for i in train_idx]
    train_labels = [labels[i] for i in train_idx]
    test_graphs = [graphs[i] for i in test_idx]
    seed = args.seed if args.seed is not None else cfg.dataset.seed
    out = resolve_path(args.out)
    log_path = resolve_path(args.log) if args.log else None

    started = time.perf_counter()
    if args.stage == "tokenizer":
        model, history, opt = train_tokenizer(
            train_graphs, cfg, seed=seed, csv_path=log_path, resume=args.resume
        )
        held_out = evaluate_tokenizer(model, test_graphs, cfg)
        save_tokenizer_checkpoint(out, model, cfg, graphs=train_graphs, opt=opt)
        report = [
            ("stage", "tokenizer"),
            ("checkpoint", out),
            ("epochs", len(history)),
            ("final_loss", history[-1]["loss"] if history else float("nan")),
            ("held_out_node_accuracy", held_out["node_accuracy"]),
            ("held_out_edge_accuracy", held_out["edge_accuracy"]),
            ("seconds", round(time.perf_counter() - started, 3)),
        ]
    else:
        if not args.tokenizer:
            raise UsageError("--tokenizer checkpoint is required for the transformer stage")
        tok, _ = load_tokenizer_checkpoint(resolve_path(args.tokenizer))
        model, history, opt = train_transformer(
            train_graphs, train_labels, tok, cfg, seed=seed, csv_path=log_path,
            resume=args.resume,
        )
        save_transformer_checkpoint(out, model, cfg, graphs=train_graphs, opt=opt)
        report = [
            ("stage", "transformer"),
            ("checkpoint", out),
            ("epochs", len(history)),
            ("final_loss", history[-1]["loss"] if history else float("nan")),
            ("final_token_accuracy", history[-1]["accuracy"] if history else float("nan")),
            ("seconds", round(time.perf_counter() - started, 3)),
        ]
    if args.figures:
        from .figures import save_training_figure

        os.makedirs(args.figures, exist_ok=True)
        save_training_figure(
            history, os.path.join(args.figures, f"{args.stage}_training.png")
        )
    _write_report(None, report)
    return 0


def cmd_generate(args) -> int:
    cfg = _load_cfg(args)
    t0 = time.perf_counter()
    tokenizer, tok_meta = load_tokenizer_checkpoint(resolve_path(args.tokenizer))
    transformer, tr_meta = load_transformer_checkpoint(resolve_path(args.transformer))
    load_seconds = time.perf_counter() - t0
    rng = np.random.default_rng(args.seed)
    hist = {
        int(k): v
        for k, v in (tr_meta.get("extra", {}).get("size_histogram") or {}).items()
    }
    if args.nodes is None and not hist:
        raise UsageError("checkpoint has no size histogram; pass --nodes")
    top_k = args.top_k if args.top_k is not None else cfg.sampling.top_k
    top_p = args.top_p if args.top_p is not None else cfg.sampling.top_p
    temperature = (
        args.temperature if args.temperature is not None else cfg.sampling.temperature
    )
    t1 = time.perf_counter()
    graphs = []
    for _ in range(args.count):
        n = args.nodes if args.nodes is not None else sample_size(hist, rng)
        g, _, _ = generate_graph(
            transformer,
            tokenizer,
            n,
            class_label=args.class_label,
            rng=rng,
            top_k=top_k,
            top_p=top_p,
            temperature=temperature,
            base_set=cfg.scales.base_set,
            growth=cfg.scales.growth,
        )
        graphs.append(g)
    sample_seconds = time.perf_counter() - t1
    out = resolve_path(args.out)
    save_graph_file(
        out,
        graphs,
        metadata={
            "generator": "sampled",
            "count": args.count,
            "seed": args.seed,
            "top_k": top_k,
            "top_p": top_p,
            "temperature": temperature,
            "load_seconds": round(load_seconds, 6),
            "sample_seconds": round(sample_seconds, 6),
        },
    )
    if args.figures:
        from .figures import save_sample_gallery

        os.makedirs(args.figures, exist_ok=True)
        save_sample_gallery(graphs, os.path.join(args.figures, "samples.png"))
    _write_report(
        None,
        [
            ("written", out),
            ("graphs", len(graphs)),
            ("load_seconds", round(load_seconds, 6)),
            ("sample_seconds", round(sample_seconds, 6)),
        ],
    )
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_cfg(args)
    molecular = args.molecular or cfg.dataset.molecular
    generated = [g for g, _ in load_graph_file(resolve_path(args.generated), molecular)]
    reference = [g for g, _ in load_graph_file(resolve_path(args.reference), molecular)]
    report = evaluate_graph_sets(generated, reference, force_orbits=args.force_orbits)
    pairs = sorted(report.as_dict().items())
    if not molecular:
        pairs.append(
            ("two_community_fraction", two_community_fraction(generated))
        )
    if molecular:
        training = None
        if args.train:
            training = [g for g, _ in load_graph_file(resolve_path(args.train), True)]
        mm = molecule_metrics(generated, training)
        pairs.append(("validity_percent", mm["validity"]))
        pairs.append(("uniqueness_percent", mm["uniqueness"]))
        if mm["novelty"] is not None:
            pairs.append(("novelty_percent", mm["novelty"]))
    if args.figures:
        from .figures import save_evaluation_figures

        save_evaluation_figures(
            generated, reference, args.figures, force_orbits=args.force_orbits
        )
    _write_report(resolve_path(args.out) if args.out else None, pairs)
    return 0


def cmd_bench(args) -> int:
    cfg = _load_cfg(args)
    if args.max_n <= args.min_n:
        raise UsageError("--max-n must exceed --min-n")
    ns = sorted(
        set(
            int(round(v))
            for v in np.geomspace(args.min_n, args.max_n, num=args.points)
        )
    )
    curve = complexity_curve(ns, cfg.scales.base_set, cfg.scales.growth)
    out = resolve_path(args.out)
    with open(out, "w") as fh:
        fh.write("n,node_wise,scale_wise\n")
        for n, a, b in zip(curve.n_values, curve.node_wise, curve.scale_wise):
            fh.write(f"{n},{a},{b}\n")
    if args.figures:
        from .figures import save_cost_figure

        os.makedirs(args.figures, exist_ok=True)
        save_cost_figure(curve, os.path.join(args.figures, "attention_cost.png"))
    _write_report(
        None,
        [
            ("curve", out),
            ("node_slope", round(curve.node_slope, 4)),
            ("scale_slope", round(curve.scale_slope, 4)),
        ],
    )
    return 0


def cmd_config(args) -> int:
    cfg = _load_cfg(args)
    text = render_config(cfg)
    if args.out:
        with open(resolve_path(args.out), "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="scalegraph",
        description=(
            "Coarse-to-fine autoregressive graph generation. Bare relative "
            f"paths resolve under ${DATA_DIR_ENV} when it is set."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="synthesize a graph dataset file")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train one stage and write a checkpoint")
    p.add_argument("--stage", choices=("tokenizer", "transformer"), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--tokenizer", default=None, help="tokenizer checkpoint (transformer stage)")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--log", default=None, help="CSV training log path")
    p.add_argument("--figures", default=None, help="directory for training curve PNGs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="sample graphs from trained checkpoints")
    p.add_argument("--tokenizer", required=True)
    p.add_argument("--transformer", required=True)
    p.add_argument("--count", type=int, default=50)
    p.add_argument("--nodes", type=int, default=None, help="fixed size instead of sampling")
    p.add_argument("--class-label", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--top-k", type=int, default=None)
    p.add_argument("--top-p", type=float, default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="score generated graphs against a reference set")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--train", default=None, help="training set for novelty (molecular)")
    p.add_argument("--molecular", action="store_true")
    p.add_argument("--force-orbits", action="store_true",
                   help="allow O(N^4) orbit counting beyond 200 nodes")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="attention-cost sweep across graph sizes")
    p.add_argument("--min-n", type=int, default=16)
    p.add_argument("--max-n", type=int, default=256)
    p.add_argument("--points", type=int, default=12)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--figures", default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("config", help="print or write the effective configuration")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_config)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
