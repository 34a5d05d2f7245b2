"""Run configuration: a JSON file plus ``key=value`` overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

from .backbone import BackboneConfig
from .skeleton import MODALITIES


class ConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    seed: int = 0
    classes: int = 3
    per_class: int = 30
    joints: int = 5
    frames: int = 16
    similarity: float = 0.5
    noise: float = 0.05
    subjects: int = 10


@dataclass
class RunConfig:
    data: Optional[str] = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    split_ratio: float = 2 / 3
    by_subject: bool = False
    split_seed: int = 0
    stream: str = "joint"
    model: BackboneConfig = field(default_factory=BackboneConfig)
    lam: float = 0.3
    tau: float = 0.125
    alpha: float = 0.9
    contrastive: bool = True
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    no_decay: list = field(default_factory=list)
    clip_norm: Optional[float] = 1.0
    epochs: int = 150
    batch_size: int = 64
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if isinstance(self.synth, dict):
            self.synth = SynthConfig(**self.synth)
        if isinstance(self.model, dict):
            self.model = BackboneConfig(**self.model)
        self.validate()

    def validate(self):
        if self.stream not in MODALITIES:
            raise ConfigError(f"unknown stream {self.stream!r}; expected one of {MODALITIES}")
        if not 0 < self.split_ratio < 1:
            raise ConfigError("split_ratio must lie in (0, 1)")
        if self.lam < 0 or self.tau <= 0 or not 0 <= self.alpha < 1:
            raise ConfigError("need lam >= 0, tau > 0 and alpha in [0, 1)")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr < 0 or self.momentum < 0 or self.weight_decay < 0:
            raise ConfigError("optimizer hyperparameters must be non-negative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive or null")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(d: dict, overrides) -> dict:
    """Apply ``a.b=value`` overrides; values are parsed as JSON when possible."""
    d = json.loads(json.dumps(d))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        node = d
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"cannot descend into {key!r}")
        node[parts[-1]] = _parse_value(raw.strip())
    return d


def load_config(path=None, overrides=()) -> RunConfig:
    base = RunConfig().to_dict()
    if path:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for k, v in user.items():
            if isinstance(v, dict) and isinstance(base.get(k), dict):
                base[k].update(v)
            else:
                base[k] = v
    return RunConfig.from_dict(apply_overrides(base, overrides))
