"""Pipeline configuration with TOML / JSON loading."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .fusion_training import TrainConfig
from .graph_encoder import AttentionMode

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    """Invalid or unreadable configuration."""


@dataclass(frozen=True)
class PipelineConfig:
    window: int = 89
    stride: int = 1
    tau: float = 0.75
    delta: float = 0.1
    n_inducing: int = 16
    d_latent: int = 32
    hidden: int | None = None
    n_heads: int = 4
    dropout: float = 0.1
    reduction: int = 16
    mode: str = "full"
    k_range: tuple = (2, 15)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    w_intra: float = 0.1
    w_inter: float = 0.9
    train_fraction: float = 0.7
    kmeans_restarts: int = 10
    single_thread: bool = True

    def __post_init__(self):
        object.__setattr__(self, "k_range", tuple(int(k) for k in self.k_range))
        if isinstance(self.train, dict):
            object.__setattr__(self, "train", _build(TrainConfig, self.train, "train"))
        try:
            object.__setattr__(self, "mode", AttentionMode.parse(self.mode).value)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        self.validate()

    def validate(self):
        if self.window < 45:
            raise ConfigError(f"window {self.window} is shorter than the long-term kernel (45)")
        if self.stride < 1:
            raise ConfigError("stride must be >= 1")
        if not 0 < self.tau < 1:
            raise ConfigError("tau must lie in (0, 1)")
        if self.delta < 0:
            raise ConfigError("delta must be non-negative")
        if len(self.k_range) != 2 or not 2 <= self.k_range[0] <= self.k_range[1]:
            raise ConfigError(f"k_range must be [k_min, k_max] with 2 <= k_min <= k_max, got {self.k_range}")
        h = self.d_latent if self.hidden is None else self.hidden
        if h % self.n_heads:
            raise ConfigError(f"graph width {h} is not divisible by {self.n_heads} heads")
        if not 0 <= self.dropout < 1:
            raise ConfigError("dropout must lie in [0, 1)")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if abs(self.w_intra + self.w_inter - 1.0) > 1e-12:
            raise ConfigError("w_intra + w_inter must equal 1")

    def with_updates(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = asdict(self)
        d["k_range"] = list(self.k_range)
        return d


def _build(cls, data, where):
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {sorted(unknown)}")
    try:
        return cls(**data)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where} section: {exc}") from None


def config_from_dict(data):
    data = dict(data)
    train = data.pop("train", {})
    if not isinstance(train, dict):
        raise ConfigError("'train' must be a table")
    cfg = _build(PipelineConfig, {**data, "train": _build(TrainConfig, train, "train")}, "config")
    return cfg


def load_config(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        if path.suffix.lower() == ".toml":
            data = tomllib.loads(text)
        elif path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            raise ConfigError(f"config {path} must be .toml or .json")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    return config_from_dict(data)


REFERENCE_DEFAULTS = {
    "tau": 0.75,
    "delta": 0.1,
    "window": 89,
    "n_inducing": 16,
    "dropout": 0.1,
    "reduction": 16,
    "w_intra": 0.1,
    "w_inter": 0.9,
    "d_latent": 32,
    "n_heads": 4,
}


def self_test(config=None):
    """Names of fields whose default drifted from the reference settings."""
    config = PipelineConfig() if config is None else config
    bad = [k for k, v in REFERENCE_DEFAULTS.items() if getattr(config, k) != v]
    if config.train.patience != 2:
        bad.append("train.patience")
    if config.train.tolerance != 1e-4:
        bad.append("train.tolerance")
    return bad
