"""Run configuration: typed sections, INI round-trip, strict key checking.

Every field ships a documented default; unknown sections or keys are
rejected loudly so silent typos cannot skew a run.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import asdict, dataclass, field, fields

from .errors import UsageError

__all__ = ["RunConfig", "default_config", "parse_config", "render_config", "load_config_file"]


@dataclass
class DatasetSection:
    name: str = "community_small"
    path: str = ""
    molecular: bool = False
    count: int = 100
    min_nodes: int = 12
    max_nodes: int = 20
    split_fraction: float = 0.8
    seed: int = 0
    class_count: int = 1
    community_p_intra: float = 0.7
    community_p_inter: float = 0.05


@dataclass
class TokenizerSection:
    mpnn_layers: int = 4
    gcn_layers: int = 4
    hidden_dim: int = 32
    latent_dim: int = 16
    codebook_size: int = 1024
    edge_mlp_hidden: int = 64
    commitment_cost: float = 0.25
    vq_loss_weight: float = 0.1
    independent_scales: bool = False


@dataclass
class TransformerSection:
    blocks: int = 8
    hidden_size: int = 256
    attention_heads: int = 8
    level_embedding_dim: int = 256
    max_scales: int = 16
    layer_dropout: float = 0.1
    conditional_dropout: float = 0.1
    token_dropout: float = 0.05
    temperature_init: float = 10.0


@dataclass
class OptimSection:
    learning_rate: float = 3e-5
    beta1: float = 0.9
    beta2: float = 0.99
    weight_decay: float = 0.01
    batch_size: int = 12
    epochs: int = 100


@dataclass
class SamplingSection:
    top_k: int = 50
    top_p: float = 0.95
    temperature: float = 1.0


@dataclass
class ScalesSection:
    base_set: tuple = (1, 2, 4, 6, 9)
    growth: int = 2


@dataclass
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    tokenizer: TokenizerSection = field(default_factory=TokenizerSection)
    transformer: TransformerSection = field(default_factory=TransformerSection)
    optim: OptimSection = field(default_factory=OptimSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    scales: ScalesSection = field(default_factory=ScalesSection)


def default_config() -> RunConfig:
    return RunConfig()


def _parse_value(section: str, key: str, raw: str, current):
    raw = raw.strip()
    try:
        if isinstance(current, bool):
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            return tuple(int(v.strip()) for v in raw.split(",") if v.strip())
        return raw
    except ValueError as exc:
        raise UsageError(f"config [{section}] {key}: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a RunConfig; unknown sections/keys are errors."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise UsageError(f"bad config syntax: {exc}") from exc
    cfg = RunConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for sec_name in parser.sections():
        if sec_name not in sections:
            raise UsageError(
                f"unknown config section [{sec_name}]; known: {sorted(sections)}"
            )
        section = sections[sec_name]
        known = {f.name for f in fields(section)}
        for key, raw in parser.items(sec_name):
            if key not in known:
                raise UsageError(
                    f"unknown key {key!r} in [{sec_name}]; known: {sorted(known)}"
                )
            setattr(section, key, _parse_value(sec_name, key, raw, getattr(section, key)))
    return cfg


def render_config(cfg: RunConfig) -> str:
    """Serialize a RunConfig to canonical INI text (stable field order)."""
    out = io.StringIO()
    for f in fields(cfg):
        section = getattr(cfg, f.name)
        out.write(f"[{f.name}]\n")
        for sf in fields(section):
            v = getattr(section, sf.name)
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, tuple):
                text = ",".join(str(x) for x in v)
            else:
                text = repr(v) if isinstance(v, float) else str(v)
            out.write(f"{sf.name} = {text}\n")
        out.write("\n")
    return out.getvalue()


def load_config_file(path) -> RunConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc


def config_as_dict(cfg: RunConfig) -> dict:
    d = asdict(cfg)
    d["scales"]["base_set"] = list(d["scales"]["base_set"])
    return d
