"""Run configuration: nested dataclasses loaded from a single JSON document."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights
from .model import ModelConfig
from .synthdata import DataConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    steps: int = 3000
    batch_size: int = 4
    seed: int = 0
    window: int = 8
    lr_decay_at: float = 2 / 3
    lr_decay: float = 0.1
    grad_clip: float = 1.0
    eval_every: int = 0  # 0: once per epoch over the training split
    checkpoint_every: int = 1000
    jsc_normalize: bool = False
    augment: bool = True
    cls_negatives: bool = True
    out: str = "runs/default"

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("train.steps must be >= 0")
        if self.batch_size < 1:
            raise ValueError("train.batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("train.lr must be > 0")


@dataclass(frozen=True)
class EvalConfig:
    split: str = "val"
    thresholds: tuple = (0.5, 0.6, 0.7, 0.8, 0.9)
    batch_size: int = 8


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        return digest(self.to_dict())

    def model_hash(self) -> str:
        return digest(self.model.to_dict())

    def replace(self, **sections) -> "RunConfig":
        return dataclasses.replace(self, **sections)


def digest(d: dict) -> str:
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "loss": LossWeights,
             "data": DataConfig, "eval": EvalConfig}


def _build(cls, raw, path: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in fields:
            raise ConfigError(f"{path}.{key}: unknown field")
        default = getattr(cls(), key)
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{path}.{key}: expected a boolean")
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{path}.{key}: expected an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{path}.{key}: expected a number")
            value = float(value)
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{path}.{key}: expected a string")
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{path}.{key}: expected a list")
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a JSON object at top level")
    parts = {}
    for key, value in raw.items():
        if key not in _SECTIONS:
            raise ConfigError(f"{key}: unknown section")
        parts[key] = _build(_SECTIONS[key], value, key)
    return RunConfig(**parts)


def load_config(path: str | os.PathLike | None = None, env: dict | None = None) -> RunConfig:
    """Read a JSON config (all fields optional); ``PROXYFORMER_SEED`` overrides ``train.seed``."""
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            offset = len(text[:exc.pos].encode())
            raise ConfigError(f"malformed JSON at byte offset {offset}: {exc.msg}") from exc
    cfg = config_from_dict(raw)
    env = os.environ if env is None else env
    seed = env.get("PROXYFORMER_SEED")
    if seed is not None:
        try:
            seed_val = int(seed)
        except ValueError as exc:
            raise ConfigError(f"PROXYFORMER_SEED: expected an integer, got {seed!r}") from exc
        cfg = cfg.replace(train=dataclasses.replace(cfg.train, seed=seed_val))
    return cfg
