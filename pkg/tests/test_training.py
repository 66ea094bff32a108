"""Training loops: convergence, determinism, checkpoint/resume."""
import csv

import numpy as np
import pytest
import torch

from scalegraph.config import default_config
from scalegraph.datasets import generate_community_small
from scalegraph.errors import ValidationError
from scalegraph.training import (
    evaluate_tokenizer,
    load_tokenizer_checkpoint,
    load_transformer_checkpoint,
    save_tokenizer_checkpoint,
    save_transformer_checkpoint,
    token_accuracy,
    train_tokenizer,
    train_transformer,
)


def tiny_config(epochs=4):
    cfg = default_config()
    cfg.tokenizer.mpnn_layers = 2
    cfg.tokenizer.gcn_layers = 2
    cfg.tokenizer.hidden_dim = 16
    cfg.tokenizer.latent_dim = 8
    cfg.tokenizer.codebook_size = 32
    cfg.tokenizer.edge_mlp_hidden = 16
    cfg.transformer.blocks = 2
    cfg.transformer.hidden_size = 32
    cfg.transformer.attention_heads = 4
    cfg.transformer.level_embedding_dim = 32
    cfg.optim.learning_rate = 3e-3
    cfg.optim.batch_size = 4
    cfg.optim.epochs = epochs
    return cfg


@pytest.fixture(scope="module")
def graphs():
    rng = np.random.default_rng(0)
    return [generate_community_small(12, rng) for _ in range(8)]


class TestTokenizerLoop:
    def test_loss_decreases_and_history_shape(self, graphs, tmp_path):
        cfg = tiny_config(epochs=6)
        path = tmp_path / "hist.csv"
        model, history, opt = train_tokenizer(graphs, cfg, seed=0, csv_path=path)
        assert len(history) == 6
        assert history[-1]["loss"] < history[0]["loss"]
        assert all(set(row) == {"epoch", "loss", "accuracy", "wall_seconds"}
                   for row in history)
        assert opt.step == 6 * 2  # 8 graphs in batches of 4
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "loss", "accuracy", "wall_seconds"]
        assert len(rows) == 7
        assert [int(r[0]) for r in rows[1:]] == list(range(6))

    def test_deterministic_under_seed(self, graphs):
        cfg = tiny_config(epochs=2)
        m1, h1, _ = train_tokenizer(graphs, cfg, seed=3)
        m2, h2, _ = train_tokenizer(graphs, cfg, seed=3)
        assert [r["loss"] for r in h1] == [r["loss"] for r in h2]
        for (_, p1), (_, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert torch.equal(p1, p2)

    def test_seed_changes_trajectory(self, graphs):
        cfg = tiny_config(epochs=2)
        _, h1, _ = train_tokenizer(graphs, cfg, seed=3)
        _, h2, _ = train_tokenizer(graphs, cfg, seed=4)
        assert [r["loss"] for r in h1] != [r["loss"] for r in h2]

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValidationError):
            train_tokenizer([], tiny_config())

    def test_evaluate_reports_accuracies(self, graphs):
        cfg = tiny_config(epochs=2)
        model, _, _ = train_tokenizer(graphs, cfg, seed=0)
        out = evaluate_tokenizer(model, graphs[:3], cfg)
        assert set(out) == {"node_accuracy", "edge_accuracy"}
        assert 0.0 <= out["node_accuracy"] <= 1.0
        assert 0.0 <= out["edge_accuracy"] <= 1.0


class TestTokenizerCheckpoint:
    def test_round_trip_preserves_everything(self, graphs, tmp_path):
        cfg = tiny_config(epochs=2)
        model, _, opt = train_tokenizer(graphs, cfg, seed=1)
        path = tmp_path / "tok.ckpt"
        save_tokenizer_checkpoint(path, model, cfg, graphs=graphs, opt=opt)
        loaded, meta = load_tokenizer_checkpoint(path)
        assert meta["kind"] == "tokenizer"
        assert meta["opt_step"] == opt.step
        assert meta["extra"]["size_histogram"] == {"12": 8}
        for (k1, p1), (k2, p2) in zip(
            model.named_parameters(), loaded.named_parameters()
        ):
            assert k1 == k2
            assert torch.allclose(p1.detach(), p2.detach(), atol=0)
        assert torch.equal(model.codebook.usage, loaded.codebook.usage)
        assert bool(loaded.codebook.primed) == bool(model.codebook.primed)
        before = evaluate_tokenizer(model, graphs[:2], cfg)
        after = evaluate_tokenizer(loaded, graphs[:2], cfg)
        assert before == after

    def test_kind_mismatch_rejected(self, graphs, tmp_path):
        cfg = tiny_config(epochs=1)
        model, _, opt = train_tokenizer(graphs[:2], cfg, seed=0)
        path = tmp_path / "tok.ckpt"
        save_tokenizer_checkpoint(path, model, cfg, opt=opt)
        with pytest.raises(ValidationError):
            load_transformer_checkpoint(path)

    def test_resume_continues_step_counter(self, graphs, tmp_path):
        cfg = tiny_config(epochs=2)
        model, _, opt = train_tokenizer(graphs, cfg, seed=5)
        path = tmp_path / "tok.ckpt"
        save_tokenizer_checkpoint(path, model, cfg, opt=opt)
        steps_before = opt.step
        _, history, opt2 = train_tokenizer(
            graphs, cfg, seed=5, resume=path
        )
        assert opt2.step == steps_before + 2 * 2
        # resumed run starts from trained weights, not from scratch
        _, fresh_history, _ = train_tokenizer(graphs, cfg, seed=5)
        assert history[0]["loss"] < fresh_history[0]["loss"]

    def test_resume_kind_checked(self, graphs, tmp_path):
        cfg = tiny_config(epochs=1)
        tok, _, opt = train_tokenizer(graphs[:2], cfg, seed=0)
        tr, _, topt = train_transformer(graphs[:2], None, tok, cfg, seed=0)
        path = tmp_path / "tr.ckpt"
        save_transformer_checkpoint(path, tr, cfg, opt=topt)
        with pytest.raises(ValidationError, match="checkpoint"):
            train_tokenizer(graphs[:2], cfg, seed=0, resume=path)


class TestTransformerLoop:
    def test_loss_decreases(self, graphs, tmp_path):
        cfg = tiny_config(epochs=8)
        tok, _, _ = train_tokenizer(graphs, tiny_config(epochs=2), seed=0)
        path = tmp_path / "hist.csv"
        model, history, opt = train_transformer(
            graphs, None, tok, cfg, seed=0, csv_path=path
        )
        assert history[-1]["loss"] < history[0]["loss"]
        assert opt.step == 8 * 2
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "loss", "accuracy", "wall_seconds"]
        assert len(rows) == 9

    def test_deterministic_under_seed(self, graphs):
        cfg = tiny_config(epochs=2)
        tok, _, _ = train_tokenizer(graphs, cfg, seed=0)
        m1, h1, _ = train_transformer(graphs, None, tok, cfg, seed=7)
        m2, h2, _ = train_transformer(graphs, None, tok, cfg, seed=7)
        assert [r["loss"] for r in h1] == [r["loss"] for r in h2]
        for (_, p1), (_, p2) in zip(m1.named_parameters(), m2.named_parameters()):
            assert torch.equal(p1, p2)

    def test_label_length_checked(self, graphs):
        cfg = tiny_config(epochs=1)
        tok, _, _ = train_tokenizer(graphs[:2], cfg, seed=0)
        with pytest.raises(ValidationError):
            train_transformer(graphs[:2], [0], tok, cfg, seed=0)

    def test_token_accuracy_bounds(self, graphs):
        cfg = tiny_config(epochs=2)
        tok, _, _ = train_tokenizer(graphs, cfg, seed=0)
        model, _, _ = train_transformer(graphs, None, tok, cfg, seed=0)
        acc = token_accuracy(model, tok, graphs[:4], None, cfg)
        assert 0.0 <= acc <= 1.0

    def test_checkpoint_round_trip(self, graphs, tmp_path):
        cfg = tiny_config(epochs=2)
        tok, _, _ = train_tokenizer(graphs, cfg, seed=0)
        model, _, opt = train_transformer(graphs, None, tok, cfg, seed=0)
        path = tmp_path / "tr.ckpt"
        save_transformer_checkpoint(path, model, cfg, graphs=graphs, opt=opt)
        loaded, meta = load_transformer_checkpoint(path)
        assert meta["kind"] == "transformer"
        assert meta["extra"]["size_histogram"] == {"12": 8}
        assert loaded.forward_calls == 0
        for (_, p1), (_, p2) in zip(
            model.named_parameters(), loaded.named_parameters()
        ):
            assert torch.allclose(p1.detach(), p2.detach(), atol=0)
        acc1 = token_accuracy(model, tok, graphs[:3], None, cfg)
        acc2 = token_accuracy(loaded, tok, graphs[:3], None, cfg)
        assert acc1 == acc2
