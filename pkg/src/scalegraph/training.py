"""Two-stage training: the graph autoencoder first, then the scale
transformer over its frozen token maps.

Both loops share the same skeleton: seeded shuffling, per-graph forward
passes accumulated into mean-loss minibatches, hand-rolled Adam updates,
and a per-epoch history row (epoch, loss, accuracy, wall_seconds) that
can stream to CSV.
"""
from __future__ import annotations

import csv
import time
from dataclasses import asdict

import numpy as np
import torch

from .config import RunConfig, config_as_dict
from .datasets import empirical_size_histogram
from .errors import ValidationError
from .numerics import adam_init, adam_step, load_checkpoint, save_checkpoint
from .tokenizer import (
    TokenizerConfig,
    TokenizerModel,
    build_tokenizer,
    reseed_dead_codes,
)
from .transformer import (
    ScaleTransformer,
    TransformerConfig,
    build_scale_schedule,
    build_transformer,
)

__all__ = [
    "evaluate_tokenizer",
    "load_tokenizer_checkpoint",
    "load_transformer_checkpoint",
    "save_tokenizer_checkpoint",
    "save_transformer_checkpoint",
    "token_accuracy",
    "train_tokenizer",
    "train_transformer",
]


def _minibatches(count: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield [int(i) for i in order[start : start + batch_size]]


def _history_writer(csv_path):
    if csv_path is None:
        return None, None
    fh = open(csv_path, "w", newline="")
    writer = csv.writer(fh)
    writer.writerow(["epoch", "loss", "accuracy", "wall_seconds"])
    return fh, writer


def _schedules_for(graphs, cfg: RunConfig):
    return [
        build_scale_schedule(g.n_nodes, cfg.scales.base_set, cfg.scales.growth)
        for g in graphs
    ]


def _maybe_resume(model, opt, resume, kind):
    """Continue from a saved checkpoint: params, moments, step counter."""
    if resume is None:
        return
    arrays, meta = load_checkpoint(resume)
    if meta.get("kind") != kind:
        raise ValidationError(f"{resume} holds a {meta.get('kind')!r} checkpoint, wanted {kind}")
    _restore_model(model, arrays)
    with torch.no_grad():
        for k in opt.m:
            mk, vk = f"opt.m.{k}", f"opt.v.{k}"
            if mk in arrays:
                opt.m[k].copy_(torch.as_tensor(arrays[mk], dtype=opt.m[k].dtype))
            if vk in arrays:
                opt.v[k].copy_(torch.as_tensor(arrays[vk], dtype=opt.v[k].dtype))
    opt.step = int(meta.get("opt_step", 0))


def train_tokenizer(graphs, cfg: RunConfig, seed: int = 0, csv_path=None, resume=None):
    """Stage 1: fit the autoencoder and codebook on a graph list.

    Returns (model, history) where history rows are dicts with epoch,
    loss, accuracy (held-in edge accuracy), and cumulative seconds.
    """
    if not graphs:
        raise ValidationError("no graphs to train on")
    t_cfg = TokenizerConfig(
        node_dim=graphs[0].node_dim,
        edge_dim=graphs[0].edge_dim,
        mpnn_layers=cfg.tokenizer.mpnn_layers,
        gcn_layers=cfg.tokenizer.gcn_layers,
        hidden_dim=cfg.tokenizer.hidden_dim,
        latent_dim=cfg.tokenizer.latent_dim,
        codebook_size=cfg.tokenizer.codebook_size,
        edge_mlp_hidden=cfg.tokenizer.edge_mlp_hidden,
        commitment_cost=cfg.tokenizer.commitment_cost,
        vq_loss_weight=cfg.tokenizer.vq_loss_weight,
        independent_scales=cfg.tokenizer.independent_scales,
    )
    model = build_tokenizer(t_cfg, seed=seed)
    params = dict(model.named_parameters())
    opt = adam_init(
        params,
        lr=cfg.optim.learning_rate,
        beta1=cfg.optim.beta1,
        beta2=cfg.optim.beta2,
        weight_decay=cfg.optim.weight_decay,
    )
    _maybe_resume(model, opt, resume, "tokenizer")
    rng = np.random.default_rng(seed)
    reseed_gen = torch.Generator().manual_seed(seed + 101)
    schedules = _schedules_for(graphs, cfg)
    fh, writer = _history_writer(csv_path)
    history = []
    start = time.perf_counter()
    try:
        for epoch in range(cfg.optim.epochs):
            losses, edge_accs = [], []
            reservoir = []
            for batch in _minibatches(len(graphs), cfg.optim.batch_size, rng):
                model.zero_grad(set_to_none=True)
                total = None
                for i in batch:
                    terms = model.loss_terms(graphs[i], schedules[i], note_usage=True)
                    total = terms["total"] if total is None else total + terms["total"]
                    losses.append(float(terms["total"].detach()))
                    edge_accs.append(terms["edge_acc"])
                    if len(reservoir) < 64:
                        reservoir.append(
                            torch.cat([d.detach() for d in terms["downs"]], dim=0)
                        )
                (total / len(batch)).backward()
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                adam_step(opt, params, grads)
            if reservoir:
                reseed_dead_codes(model.codebook, torch.cat(reservoir, dim=0), reseed_gen)
            row = {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "accuracy": float(np.mean(edge_accs)),
                "wall_seconds": time.perf_counter() - start,
            }
            history.append(row)
            if writer:
                writer.writerow(
                    [row["epoch"], row["loss"], row["accuracy"], row["wall_seconds"]]
                )
                fh.flush()
    finally:
        if fh:
            fh.close()
    return model, history, opt


def evaluate_tokenizer(model: TokenizerModel, graphs, cfg: RunConfig):
    """Reconstruction accuracy on a (held-out) graph list."""
    schedules = _schedules_for(graphs, cfg)
    node_accs, edge_accs = [], []
    with torch.no_grad():
        for g, sched in zip(graphs, schedules):
            terms = model.loss_terms(g, sched)
            node_accs.append(terms["node_acc"])
            edge_accs.append(terms["edge_acc"])
    return {
        "node_accuracy": float(np.mean(node_accs)),
        "edge_accuracy": float(np.mean(edge_accs)),
    }


def train_transformer(
    graphs,
    labels,
    tokenizer_model: TokenizerModel,
    cfg: RunConfig,
    seed: int = 0,
    csv_path=None,
    resume=None,
):
    """Stage 2: fit the scale transformer on frozen token pyramids."""
    if not graphs:
        raise ValidationError("no graphs to train on")
    if labels is None:
        labels = [0] * len(graphs)
    if len(labels) != len(graphs):
        raise ValidationError("labels must match graphs one to one")
    schedules = _schedules_for(graphs, cfg)
    max_scales = max(cfg.transformer.max_scales,
                     max(s.n_scales for s in schedules))
    tr_cfg = TransformerConfig(
        blocks=cfg.transformer.blocks,
        hidden_size=cfg.transformer.hidden_size,
        attention_heads=cfg.transformer.attention_heads,
        code_dim=tokenizer_model.cfg.latent_dim,
        vocab_size=tokenizer_model.cfg.codebook_size,
        class_count=cfg.dataset.class_count,
        max_scales=max_scales,
        level_embedding_dim=cfg.transformer.level_embedding_dim,
        layer_dropout=cfg.transformer.layer_dropout,
        conditional_dropout=cfg.transformer.conditional_dropout,
        token_dropout=cfg.transformer.token_dropout,
        temperature_init=cfg.transformer.temperature_init,
    )
    model = build_transformer(tr_cfg, seed=seed)
    codebook_weight = tokenizer_model.codebook.weight.detach().clone()
    with torch.no_grad():
        token_maps = [
            tokenizer_model.tokenize(g, sched) for g, sched in zip(graphs, schedules)
        ]
    params = dict(model.named_parameters())
    opt = adam_init(
        params,
        lr=cfg.optim.learning_rate,
        beta1=cfg.optim.beta1,
        beta2=cfg.optim.beta2,
        weight_decay=cfg.optim.weight_decay,
    )
    _maybe_resume(model, opt, resume, "transformer")
    rng = np.random.default_rng(seed)
    drop_gen = torch.Generator().manual_seed(seed + 202)
    fh, writer = _history_writer(csv_path)
    history = []
    start = time.perf_counter()
    try:
        for epoch in range(cfg.optim.epochs):
            losses, accs = [], []
            for batch in _minibatches(len(graphs), cfg.optim.batch_size, rng):
                model.zero_grad(set_to_none=True)
                total = None
                for i in batch:
                    loss, acc = model.next_scale_loss(
                        token_maps[i],
                        schedules[i],
                        codebook_weight,
                        class_label=labels[i],
                        training=True,
                        generator=drop_gen,
                    )
                    total = loss if total is None else total + loss
                    losses.append(float(loss.detach()))
                    accs.append(acc)
                (total / len(batch)).backward()
                grads = {k: p.grad for k, p in params.items() if p.grad is not None}
                adam_step(opt, params, grads)
            row = {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "accuracy": float(np.mean(accs)),
                "wall_seconds": time.perf_counter() - start,
            }
            history.append(row)
            if writer:
                writer.writerow(
                    [row["epoch"], row["loss"], row["accuracy"], row["wall_seconds"]]
                )
                fh.flush()
    finally:
        if fh:
            fh.close()
    return model, history, opt


def token_accuracy(transformer, tokenizer_model, graphs, labels, cfg: RunConfig):
    """Teacher-forced token accuracy with all dropout off."""
    if labels is None:
        labels = [0] * len(graphs)
    schedules = _schedules_for(graphs, cfg)
    codebook_weight = tokenizer_model.codebook.weight.detach()
    accs = []
    with torch.no_grad():
        for g, sched, lab in zip(graphs, schedules, labels):
            tokens = tokenizer_model.tokenize(g, sched)
            _, acc = transformer.next_scale_loss(
                tokens, sched, codebook_weight, class_label=lab, training=False
            )
            accs.append(acc)
    return float(np.mean(accs))


# ---------------------------------------------------------------------------
# checkpointing


def _model_arrays(model, opt=None):
    arrays = {}
    for k, p in model.named_parameters():
        arrays[f"param.{k}"] = p.detach()
    for k, b in model.named_buffers():
        arrays[f"buffer.{k}"] = b.detach()
    if opt is not None:
        for k, m in opt.m.items():
            arrays[f"opt.m.{k}"] = m
        for k, v in opt.v.items():
            arrays[f"opt.v.{k}"] = v
    return arrays


def _restore_model(model, arrays):
    with torch.no_grad():
        for k, p in model.named_parameters():
            key = f"param.{k}"
            if key not in arrays:
                raise ValidationError(f"checkpoint is missing parameter {k}")
            p.copy_(torch.as_tensor(arrays[key], dtype=p.dtype))
        for k, b in model.named_buffers():
            key = f"buffer.{k}"
            if key in arrays:
                b.copy_(torch.as_tensor(arrays[key]).to(b.dtype))


def save_tokenizer_checkpoint(path, model: TokenizerModel, cfg: RunConfig,
                              graphs=None, opt=None, extra=None):
    meta = {
        "kind": "tokenizer",
        "arch": asdict(model.cfg),
        "run_config": config_as_dict(cfg),
        "opt_step": 0 if opt is None else opt.step,
        "extra": extra or {},
    }
    if graphs is not None:
        meta["extra"]["size_histogram"] = {
            str(k): v for k, v in empirical_size_histogram(graphs).items()
        }
    save_checkpoint(path, _model_arrays(model, opt), meta)


def load_tokenizer_checkpoint(path):
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "tokenizer":
        raise ValidationError(f"{path} is not a tokenizer checkpoint")
    model = TokenizerModel(TokenizerConfig(**meta["arch"]))
    _restore_model(model, arrays)
    return model, meta


def save_transformer_checkpoint(path, model: ScaleTransformer, cfg: RunConfig,
                                graphs=None, opt=None, extra=None):
    meta = {
        "kind": "transformer",
        "arch": asdict(model.cfg),
        "run_config": config_as_dict(cfg),
        "opt_step": 0 if opt is None else opt.step,
        "extra": extra or {},
    }
    if graphs is not None:
        meta["extra"]["size_histogram"] = {
            str(k): v for k, v in empirical_size_histogram(graphs).items()
        }
    save_checkpoint(path, _model_arrays(model, opt), meta)


def load_transformer_checkpoint(path):
    arrays, meta = load_checkpoint(path)
    if meta.get("kind") != "transformer":
        raise ValidationError(f"{path} is not a transformer checkpoint")
    model = ScaleTransformer(TransformerConfig(**meta["arch"]))
    _restore_model(model, arrays)
    model.forward_calls = 0
    return model, meta
