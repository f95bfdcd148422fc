"""Run configuration: a flat ``section.key = value`` text file.

Example::

    # comments start with '#'
    model.num_classes = 10
    train.epochs = 10
    data.annotations = data/annotations.json
"""
from __future__ import annotations

import ast
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Tuple

from ..core import ConfigError, ModelConfig
from .synthetic import SyntheticSpec


@dataclass
class TrainSchedule:
    epochs: int = 10
    batch_size: int = 4
    base_lr: float = 6e-4
    lr_drop_epochs: Tuple[int, ...] = (3, 7)
    drop_factor: float = 10.0
    seed: int = 0
    checkpoint_every: int = 1
    grad_clip: float = 0.0

    def __post_init__(self):
        self.lr_drop_epochs = tuple(int(e) for e in self.lr_drop_epochs)
        if any(e >= self.epochs for e in self.lr_drop_epochs):
            raise ConfigError("learning-rate drop epochs must precede the last epoch")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("epochs and batch_size must be positive")

    def lr_at(self, epoch):
        drops = sum(1 for e in self.lr_drop_epochs if epoch >= e)
        return self.base_lr / self.drop_factor ** drops


@dataclass
class DataConfig:
    annotations: str = "data/annotations.json"
    feature_dir: str = "data/features"
    aux_feature_dir: str = ""
    train_split: str = "training"
    eval_split: str = "validation"


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    data: DataConfig = field(default_factory=DataConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    out_dir: str = "runs/default"
    thresholds: Tuple[float, ...] = ()

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def flat_items(self):
        for section in ("model", "train", "data", "synth"):
            for f in dataclasses.fields(getattr(self, section)):
                yield f"{section}.{f.name}", getattr(getattr(self, section), f.name)
        yield "out_dir", self.out_dir
        yield "thresholds", self.thresholds

    def dumps(self):
        lines = []
        for key, value in self.flat_items():
            if isinstance(value, tuple):
                value = ", ".join(str(v) for v in value)
            lines.append(f"{key} = {value}")
        return "\n".join(lines) + "\n"


def _parse_value(text):
    text = text.strip()
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        if "," in text:
            return tuple(_parse_value(p) for p in text.split(",") if p.strip())
        return text


def parse_pairs(text):
    pairs = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = _parse_value(value)
    return pairs


def _coerce(value, current, key):
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, tuple):
        if value == "":
            return ()
        value = value if isinstance(value, (tuple, list)) else (value,)
        return tuple(value)
    if isinstance(current, int) and isinstance(value, int):
        return value
    if isinstance(current, float) and isinstance(value, (int, float)):
        return float(value)
    if isinstance(current, str):
        return str(value)
    raise ConfigError(f"{key}: cannot use {value!r} for a {type(current).__name__} field")


def build_config(pairs: dict) -> Config:
    sections = {name: {} for name in ("model", "train", "data", "synth")}
    top = {}
    defaults = Config()
    for key, value in pairs.items():
        head, _, rest = key.partition(".")
        if head in sections and rest:
            obj = getattr(defaults, head)
            if rest not in {f.name for f in dataclasses.fields(obj)}:
                raise ConfigError(f"unknown config key {key!r}")
            sections[head][rest] = _coerce(value, getattr(obj, rest), key)
        elif key in ("out_dir", "thresholds"):
            top[key] = _coerce(value, getattr(defaults, key), key)
        else:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return Config(
            model=ModelConfig(**sections["model"]),
            train=TrainSchedule(**sections["train"]),
            data=DataConfig(**sections["data"]),
            synth=SyntheticSpec(**sections["synth"]),
            **top,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> Config:
    """Read a config file (optional) and apply ``overrides`` on top."""
    pairs = {}
    if path:
        try:
            pairs.update(parse_pairs(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    pairs.update(overrides or {})
    return build_config(pairs)


def save_config(cfg: Config, path):
    Path(path).write_text(cfg.dumps())
