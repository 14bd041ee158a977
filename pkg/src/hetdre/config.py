"""Dataclass configs and the flat ``key = value`` config-file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

ABLATIONS = (
    "no_local_lstm",
    "no_global_lstm",
    "no_argument_nodes",
    "no_pos_embedding",
    "no_ner_embedding",
    "no_pos_edge_features",
)


@dataclass
class ModelConfig:
    word_dim: int = 300
    pos_dim: int = 30
    ner_dim: int = 30
    local_hidden: int = 200
    local_layers: int = 2
    global_hidden: int = 128
    global_layers: int = 2
    heads: int = 10
    edge_dim: int = 50
    model_dim: int = 200
    ffn_mult: int = 2
    lstm_dropout: float = 0.3
    leaky_slope: float = 0.2
    activation: str = "elu"
    max_speakers: int = 32
    schedule: str = "ABCDA"
    no_local_lstm: bool = False
    no_global_lstm: bool = False
    no_argument_nodes: bool = False
    no_pos_embedding: bool = False
    no_ner_embedding: bool = False
    no_pos_edge_features: bool = False

    def __post_init__(self):
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} is not a multiple of heads {self.heads}")
        from .gat import MetaPathSchedule  # validates the schedule string

        MetaPathSchedule.parse(self.schedule)

    @property
    def token_dim(self) -> int:
        return self.word_dim + (0 if self.no_pos_embedding else self.pos_dim) + (
            0 if self.no_ner_embedding else self.ner_dim)


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 16
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    @property
    def head_count(self) -> int:
        return self.model.heads

    @property
    def schedule(self) -> str:
        return self.model.schedule


@dataclass
class RunConfig:
    data_dir: str = "data"
    vectors: str = ""
    cache_dir: str = "cache"
    out_dir: str = "runs"
    checkpoint: str = ""
    backend: str = "rule"
    format: str = "text"
    workers: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)


class ConfigError(ValueError):
    pass


def _coerce(value: str, typ: Any):
    if typ in (bool, "bool"):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {value!r}")
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value.strip()


def _targets(cfg: RunConfig) -> dict[str, tuple[Any, dataclasses.Field]]:
    out = {}
    for obj in (cfg, cfg.train, cfg.train.model):
        for f in fields(obj):
            if f.name in ("train", "model"):
                continue
            out[f.name] = (obj, f)
    return out


def apply_overrides(cfg: RunConfig, items: dict[str, str]) -> RunConfig:
    targets = _targets(cfg)
    for key, raw in items.items():
        key = key.replace("-", "_")
        if key not in targets:
            raise ConfigError(f"unknown config key {key!r}")
        obj, f = targets[key]
        try:
            setattr(obj, key, _coerce(str(raw), f.type))
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
    cfg.train.model.__post_init__()
    return cfg


def parse_config_text(text: str) -> dict[str, str]:
    items = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {n}: expected key = value")
        items[key.strip()] = value.strip()
    return items


def load_config(path: str | Path | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    """Defaults, then file, then overrides (highest precedence)."""
    cfg = RunConfig()
    if path:
        apply_overrides(cfg, parse_config_text(Path(path).read_text()))
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg


def flatten(cfg: RunConfig) -> dict[str, Any]:
    return {k: getattr(obj, k) for k, (obj, _) in _targets(cfg).items()}


def dump_config(cfg: RunConfig) -> str:
    return "\n".join(f"{k} = {v}" for k, v in flatten(cfg).items()) + "\n"


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**{f.name: d[f.name] for f in fields(ModelConfig) if f.name in d})
