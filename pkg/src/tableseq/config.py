"""Experiment configuration: nested dataclasses, YAML files, overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, is_dataclass
from pathlib import Path

import yaml

from .datagen import GenConfig
from .losses import LossWeights
from .model import ModelConfig


@dataclass(frozen=True)
class OptimConfig:
    steps: int = 1000
    batch_size: int = 8
    lr: float = 1e-4
    weight_decay: float = 1e-4
    milestones: tuple[float, ...] = (0.8,)
    gamma: float = 0.1
    log_every: int = 25
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.steps < 1 or self.batch_size < 1 or self.log_every < 1:
            raise ValueError("steps, batch_size and log_every must be positive")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every cannot be negative")
        if self.lr <= 0 or self.gamma <= 0:
            raise ValueError("lr and gamma must be positive")
        for frac in self.milestones:
            if not 0.0 < frac <= 1.0:
                raise ValueError("milestones are fractions of total steps")


@dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = ModelConfig()
    data: GenConfig = GenConfig()
    optim: OptimConfig = OptimConfig()
    weights: LossWeights = LossWeights()
    visual_alignment: bool = True
    n_train: int = 50
    n_eval: int = 20
    data_seed: int = 100

    def __post_init__(self) -> None:
        if self.model.image_side != self.data.image_side:
            raise ValueError(
                "model and generator disagree on the image side: "
                f"{self.model.image_side} vs {self.data.image_side}")
        if self.data.max_span > self.model.max_span:
            raise ValueError("generator spans exceed the model vocabulary")
        if self.n_train < 1 or self.n_eval < 0:
            raise ValueError("dataset sizes out of range")


def config_to_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _build(cls, data: dict):
    kwargs = {}
    known = {f.name: f for f in fields(cls)}
    for key, value in data.items():
        if key not in known:
            raise ValueError(f"unknown field {key!r} for {cls.__name__}")
        default = known[key].default
        if is_dataclass(default) and isinstance(value, dict):
            value = _build(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(
        yaml.safe_dump(config_to_dict(cfg), sort_keys=True))


def load_config(path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text())
    if not isinstance(data, dict):
        raise ValueError(f"{path} does not hold a configuration mapping")
    return config_from_dict(data)


def apply_overrides(cfg: ExperimentConfig, overrides) -> ExperimentConfig:
    """Apply "section.field=value" strings; values parse as YAML."""
    data = config_to_dict(cfg)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        keys = dotted.strip().split(".")
        target = data
        for key in keys[:-1]:
            if key not in target or not isinstance(target[key], dict):
                raise ValueError(f"unknown config section {key!r} in {item!r}")
            target = target[key]
        leaf = keys[-1]
        if leaf not in target:
            raise ValueError(f"unknown config field {dotted!r}")
        target[leaf] = yaml.safe_load(raw)
    return config_from_dict(data)
