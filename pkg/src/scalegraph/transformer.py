"""Scale-wise autoregressive transformer over token pyramids.

One "step" of this model is a whole scale, not a single token: every
position inside scale k is predicted in parallel from the scales before
it, so a graph with K scales costs K forward calls to sample. Attention
is block-causal (a position sees every scale up to and including its
own), carries no intra-scale positional signal, and normalizes queries
and keys to unit length with a learned per-head temperature.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import NumericError, ValidationError
from .graphs import Graph
from .numerics import interp1d, unit_norm
from .tokenizer import TokenizerModel, init_parameters

__all__ = [
    "KVCache",
    "ScaleSchedule",
    "ScaleTransformer",
    "TransformerConfig",
    "block_causal_mask",
    "build_scale_schedule",
    "build_block_causal_mask",
    "build_transformer",
    "filter_top_k_top_p",
    "generate_graph",
    "sample_categorical",
]


@dataclass(frozen=True)
class ScaleSchedule:
    """Strictly increasing token-map sizes, coarsest first."""

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if not sizes:
            raise ValidationError("schedule needs at least one scale")
        if sizes[0] < 1:
            raise ValidationError("scale sizes must be positive")
        for a, b in zip(sizes, sizes[1:]):
            if b <= a:
                raise ValidationError(f"schedule must strictly increase, got {sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_nodes(self) -> int:
        return self.sizes[-1]

    @property
    def n_scales(self) -> int:
        return len(self.sizes)

    @property
    def total_tokens(self) -> int:
        return sum(self.sizes)


def build_scale_schedule(n_nodes: int, base_set=(1, 2, 4, 6, 9), growth: int = 2) -> ScaleSchedule:
    """Resolution ladder for an n-node graph.

    Takes the base sizes below n in order, extends geometrically by
    `growth` once the base runs out, and always ends exactly at n. The
    first scale is always a single token.
    """
    if n_nodes < 1:
        raise ValidationError(f"need n >= 1, got {n_nodes}")
    if growth < 2:
        raise ValidationError(f"growth ratio must be >= 2, got {growth}")
    base = sorted(set(int(b) for b in base_set))
    if not base or base[0] != 1:
        raise ValidationError(f"base set must start at 1, got {base_set}")
    sizes = [b for b in base if b < n_nodes]
    if sizes:
        last = sizes[-1]
        while last * growth < n_nodes:
            last *= growth
            sizes.append(last)
    sizes.append(n_nodes)
    return ScaleSchedule(tuple(sizes))


def block_causal_mask(block_sizes) -> torch.Tensor:
    """(L, L) bool mask: position in block b may attend blocks <= b."""
    sizes = [int(s) for s in block_sizes]
    if any(s < 1 for s in sizes):
        raise ValidationError(f"block sizes must be positive, got {sizes}")
    ids = torch.repeat_interleave(
        torch.arange(len(sizes)), torch.tensor(sizes, dtype=torch.long)
    )
    return ids.unsqueeze(1) >= ids.unsqueeze(0)


def build_block_causal_mask(schedule: ScaleSchedule) -> torch.Tensor:
    """Mask over the start token plus every scale's positions.

    Row layout: one leading start position, then n_1, n_2, ... blocks;
    total side length 1 + sum(n_k). The start only sees itself and each
    scale sees the start plus all scales up to its own.
    """
    return block_causal_mask([1] + list(schedule.sizes))


@dataclass(frozen=True)
class TransformerConfig:
    """Architecture settings for the scale-wise decoder."""

    blocks: int = 8
    hidden_size: int = 256
    attention_heads: int = 8
    code_dim: int = 16
    vocab_size: int = 1024
    class_count: int = 1
    max_scales: int = 16
    level_embedding_dim: int = 256
    layer_dropout: float = 0.1
    conditional_dropout: float = 0.1
    token_dropout: float = 0.05
    temperature_init: float = 10.0

    def __post_init__(self):
        if self.hidden_size % self.attention_heads:
            raise ValidationError(
                f"hidden {self.hidden_size} not divisible by {self.attention_heads} heads"
            )
        if self.level_embedding_dim != self.hidden_size:
            raise ValidationError("level embeddings are added, so their dim must match hidden")
        for name in ("blocks", "code_dim", "vocab_size", "class_count", "max_scales"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        for name in ("layer_dropout", "conditional_dropout", "token_dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValidationError(f"{name} must be in [0, 1)")


class KVCache:
    """Per-block key/value memory for stepwise generation."""

    def __init__(self, n_blocks: int):
        self.k = [None] * n_blocks
        self.v = [None] * n_blocks
        self.length = 0

    def append(self, idx: int, k_new: torch.Tensor, v_new: torch.Tensor):
        if self.k[idx] is None:
            self.k[idx], self.v[idx] = k_new, v_new
        else:
            self.k[idx] = torch.cat([self.k[idx], k_new], dim=1)
            self.v[idx] = torch.cat([self.v[idx], v_new], dim=1)
        return self.k[idx], self.v[idx]


def _modulate(u, shift, scale):
    return u * (1.0 + scale) + shift


class AdaLNBlock(nn.Module):
    """Pre-norm attention + MLP with conditioning-driven shift/scale.

    Queries and keys are unit-normalized per head and rescaled by a
    learned temperature, so attention sharpness is decoupled from hidden
    magnitude.
    """

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        h = cfg.hidden_size
        self.heads = cfg.attention_heads
        self.head_dim = h // cfg.attention_heads
        self.ln1 = nn.LayerNorm(h, elementwise_affine=False)
        self.ln2 = nn.LayerNorm(h, elementwise_affine=False)
        self.qkv = nn.Linear(h, 3 * h)
        self.proj = nn.Linear(h, h)
        self.temperature = nn.Parameter(
            torch.full((cfg.attention_heads,), float(cfg.temperature_init))
        )
        self.mlp = nn.Sequential(nn.Linear(h, 4 * h), nn.GELU(), nn.Linear(4 * h, h))
        self.ada = nn.Linear(h, 4 * h)
        nn.init.zeros_(self.ada.weight)
        nn.init.zeros_(self.ada.bias)

    def _drop(self, x, p, generator):
        if p <= 0.0 or generator is None:
            return x
        keep = (torch.rand(x.shape, generator=generator, dtype=torch.float64) >= p).to(x.dtype)
        return x * keep / (1.0 - p)

    def forward(self, x, cond, attn_mask=None, cache=None, cache_idx=None,
                drop_p=0.0, generator=None):
        s1, b1, s2, b2 = self.ada(torch.nn.functional.silu(cond)).chunk(4)
        u = _modulate(self.ln1(x), b1, s1)
        L = u.shape[0]
        qkv = self.qkv(u).reshape(L, 3, self.heads, self.head_dim).permute(1, 2, 0, 3)
        q, k, v = qkv[0], qkv[1], qkv[2]
        q = unit_norm(q, axis=-1)
        k = unit_norm(k, axis=-1)
        if cache is not None:
            k, v = cache.append(cache_idx, k, v)
        scores = (q @ k.transpose(-1, -2)) * self.temperature.view(-1, 1, 1)
        if attn_mask is not None:
            scores = scores.masked_fill(~attn_mask, float("-inf"))
        att = torch.softmax(scores, dim=-1)
        out = (att @ v).permute(1, 0, 2).reshape(L, -1)
        x = x + self._drop(self.proj(out), drop_p, generator)
        u2 = _modulate(self.ln2(x), b2, s2)
        x = x + self._drop(self.mlp(u2), drop_p, generator)
        return x


class ScaleTransformer(nn.Module):
    """Block-causal decoder predicting each scale's tokens in parallel."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        h = cfg.hidden_size
        self.class_embed = nn.Embedding(cfg.class_count, h)
        self.null_cond = nn.Parameter(torch.zeros(h))
        self.mask_token = nn.Parameter(torch.zeros(h))
        self.level_embed = nn.Embedding(cfg.max_scales, h)
        self.in_proj = nn.Linear(cfg.code_dim, h)
        self.blocks = nn.ModuleList(AdaLNBlock(cfg) for _ in range(cfg.blocks))
        self.final_norm = nn.LayerNorm(h)
        self.head = nn.Linear(h, cfg.vocab_size)
        self.forward_calls = 0

    # ---- conditioning -----------------------------------------------------

    def _cond_vector(self, class_label: int, training=False, generator=None):
        if not 0 <= class_label < self.cfg.class_count:
            raise ValidationError(
                f"class label {class_label} outside [0, {self.cfg.class_count})"
            )
        cond = self.class_embed.weight[class_label]
        if training and self.cfg.conditional_dropout > 0 and generator is not None:
            u = torch.rand((), generator=generator, dtype=torch.float64)
            if float(u) < self.cfg.conditional_dropout:
                cond = self.null_cond
        return cond

    # ---- teacher-forced path ---------------------------------------------

    def assemble_teacher_inputs(self, tokens, schedule: ScaleSchedule, codebook_weight,
                                class_label: int = 0, training=False, generator=None):
        """Token maps -> input rows for every position of every scale.

        Scale 1 reads the conditioning vector; scale k>1 reads the previous
        scale's code vectors re-upsampled to its own length. Rows carry a
        per-scale level embedding and no intra-scale position signal.
        Returns (x, cond, block_sizes).
        """
        sizes = schedule.sizes
        if len(tokens) < len(sizes) - 1:
            raise ValidationError(
                f"need tokens for scales 1..{len(sizes) - 1}, got {len(tokens)}"
            )
        if len(sizes) > self.cfg.max_scales:
            raise ValidationError(
                f"{len(sizes)} scales exceed max_scales={self.cfg.max_scales}"
            )
        cond = self._cond_vector(class_label, training, generator)
        dtype = self.in_proj.weight.dtype
        rows = [cond.to(dtype).unsqueeze(0).expand(sizes[0], -1)
                + self.level_embed.weight[0].to(dtype)]
        for k in range(1, len(sizes)):
            prev = torch.as_tensor(tokens[k - 1], dtype=torch.long)
            if prev.numel() != sizes[k - 1]:
                raise ValidationError(
                    f"scale {k} has {prev.numel()} tokens, schedule wants {sizes[k - 1]}"
                )
            vecs = codebook_weight[prev].to(dtype)
            up = interp1d(vecs, sizes[k], mode="linear", axis=0)
            emb = self.in_proj(up)
            if training and self.cfg.token_dropout > 0 and generator is not None:
                drop = torch.rand(
                    (emb.shape[0],), generator=generator, dtype=torch.float64
                ) < self.cfg.token_dropout
                emb = torch.where(drop.unsqueeze(1), self.mask_token.to(dtype), emb)
            rows.append(emb + self.level_embed.weight[k].to(dtype))
        return torch.cat(rows, dim=0), cond, list(sizes)

    def forward_hidden(self, x, cond, attn_mask=None, caches=None,
                       drop_p=0.0, generator=None):
        self.forward_calls += 1
        for i, blk in enumerate(self.blocks):
            x = blk(x, cond, attn_mask=attn_mask, cache=caches, cache_idx=i,
                    drop_p=drop_p, generator=generator)
        return self.head(self.final_norm(x))

    def sequence_logits(self, tokens, schedule, codebook_weight, class_label=0,
                        training=False, generator=None):
        """Teacher-forced logits, one (V,) row per token position."""
        x, cond, sizes = self.assemble_teacher_inputs(
            tokens, schedule, codebook_weight, class_label, training, generator
        )
        mask = block_causal_mask(sizes)
        drop = self.cfg.layer_dropout if training else 0.0
        logits = self.forward_hidden(x, cond, attn_mask=mask,
                                     drop_p=drop, generator=generator)
        if not torch.all(torch.isfinite(logits)):
            raise NumericError("non-finite transformer logits")
        return logits

    def next_scale_loss(self, tokens, schedule, codebook_weight, class_label=0,
                        training=False, generator=None):
        """Cross-entropy of every scale's tokens given all coarser scales."""
        if len(tokens) != schedule.n_scales:
            raise ValidationError(
                f"{len(tokens)} token maps for {schedule.n_scales} scales"
            )
        logits = self.sequence_logits(
            tokens, schedule, codebook_weight, class_label, training, generator
        )
        target = torch.cat([torch.as_tensor(t, dtype=torch.long) for t in tokens])
        loss = nn.functional.cross_entropy(logits, target)
        with torch.no_grad():
            acc = float((logits.argmax(dim=1) == target).float().mean())
        return loss, acc

    # ---- generation -------------------------------------------------------

    def generate_tokens(self, schedule: ScaleSchedule, codebook_weight,
                        class_label: int = 0, rng: np.random.Generator | None = None,
                        top_k: int | None = 50, top_p: float | None = 0.95,
                        temperature: float = 1.0):
        """Sample a token pyramid scale by scale with cached attention.

        Exactly one forward call per scale; positions within a scale are
        drawn in parallel from their filtered distributions.
        """
        if rng is None:
            rng = np.random.default_rng()
        if temperature <= 0:
            raise ValidationError(f"temperature must be positive, got {temperature}")
        sizes = schedule.sizes
        if len(sizes) > self.cfg.max_scales:
            raise ValidationError(
                f"{len(sizes)} scales exceed max_scales={self.cfg.max_scales}"
            )
        cond = self._cond_vector(class_label)
        dtype = self.in_proj.weight.dtype
        caches = KVCache(len(self.blocks))
        tokens = []
        with torch.no_grad():
            for k, n_k in enumerate(sizes):
                if k == 0:
                    x = cond.to(dtype).unsqueeze(0).expand(n_k, -1) \
                        + self.level_embed.weight[0].to(dtype)
                else:
                    vecs = codebook_weight[tokens[-1]].to(dtype)
                    up = interp1d(vecs, n_k, mode="linear", axis=0)
                    x = self.in_proj(up) + self.level_embed.weight[k].to(dtype)
                logits = self.forward_hidden(x, cond, attn_mask=None, caches=caches)
                if not torch.all(torch.isfinite(logits)):
                    raise NumericError("non-finite logits during generation")
                drawn = []
                for row in logits:
                    probs = torch.softmax(row.double() / temperature, dim=0).numpy()
                    probs = filter_top_k_top_p(probs, top_k=top_k, top_p=top_p)
                    drawn.append(sample_categorical(probs, rng))
                tokens.append(torch.as_tensor(drawn, dtype=torch.long))
        return tokens


def filter_top_k_top_p(probs, top_k: int | None = None, top_p: float | None = None):
    """Zero out everything outside the top-k / nucleus set, renormalize.

    Top-k keeps the k most probable entries, then top-p keeps the shortest
    prefix of the survivors (probability-descending, ties resolved toward
    lower indices) whose renormalized mass reaches p. At least one entry
    always survives.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError(f"probs must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise NumericError("probs must be finite and non-negative")
    total = p.sum()
    if total <= 0:
        raise NumericError("probs sum to zero")
    if top_k is not None and top_k < 1:
        raise ValidationError(f"top_k must be >= 1, got {top_k}")
    if top_p is not None and not 0.0 < top_p <= 1.0:
        raise ValidationError(f"top_p must be in (0, 1], got {top_p}")
    order = np.argsort(-p, kind="stable")  # descending, ties keep lower index first
    if top_k is not None:
        order = order[: min(top_k, order.size)]
    if top_p is not None:
        q = p[order] / p[order].sum()
        cut = int(np.searchsorted(np.cumsum(q), top_p, side="left")) + 1
        order = order[: min(cut, order.size)]
    out = np.zeros_like(p)
    out[order] = p[order]
    return out / out.sum()


def sample_categorical(probs, rng: np.random.Generator) -> int:
    """Inverse-CDF draw from a normalized probability vector."""
    u = rng.random()
    c = np.cumsum(probs)
    return int(min(np.searchsorted(c, u, side="right"), len(probs) - 1))


def generate_graph(transformer: ScaleTransformer, tokenizer: TokenizerModel,
                   n_nodes: int, class_label: int = 0,
                   rng: np.random.Generator | None = None,
                   top_k: int | None = 50, top_p: float | None = 0.95,
                   temperature: float = 1.0,
                   base_set=(1, 2, 4, 6, 9), growth: int = 2):
    """Sample one graph end to end: tokens coarse to fine, then decode."""
    schedule = build_scale_schedule(n_nodes, base_set=base_set, growth=growth)
    tokens = transformer.generate_tokens(
        schedule, tokenizer.codebook.weight.detach(), class_label,
        rng=rng, top_k=top_k, top_p=top_p, temperature=temperature,
    )
    return tokenizer.detokenize(tokens, schedule, n_nodes), tokens, schedule


def build_transformer(cfg: TransformerConfig, seed: int = 0, dtype=torch.float32) -> ScaleTransformer:
    """Deterministically initialized scale transformer."""
    model = ScaleTransformer(cfg)
    gen = torch.Generator().manual_seed(seed)
    init_parameters(model, gen)
    with torch.no_grad():
        model.class_embed.weight.normal_(0.0, 0.02, generator=gen)
        model.level_embed.weight.normal_(0.0, 0.02, generator=gen)
        model.null_cond.normal_(0.0, 0.02, generator=gen)
        model.mask_token.normal_(0.0, 0.02, generator=gen)
        for blk in model.blocks:
            nn.init.zeros_(blk.ada.weight)
            nn.init.zeros_(blk.ada.bias)
    model.to(dtype)
    model.forward_calls = 0
    return model
