"""Run configuration: one JSON-serializable bundle of every knob.

A run config unites the model architecture, training schedule, loss
weights, and split layout. Two named presets expose the two published
configurations, which disagree on window size and loss weights:

    paper-table  window 60,  weights (0.5, 3.0, 1.5)
    paper-text   window 100, weights (1.0, 1.5, 1.2)

Flag overrides always win over the config file (``section.field=value``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict, replace, fields

from .ingest import SplitSpec
from .model import ModelConfig
from .train import LossWeights, TrainConfig

PRESETS = ("default", "paper-table", "paper-text")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    weights: LossWeights
    split: SplitSpec
    percentile: float = 99.0

    def validate(self) -> None:
        self.split.validate()
        if not 0.0 < self.percentile <= 100.0:
            raise ConfigError(f"percentile must be in (0, 100], got {self.percentile}")

    def to_dict(self) -> dict:
        return {"model": self.model.to_dict(), "train": asdict(self.train),
                "weights": asdict(self.weights), "split": asdict(self.split),
                "percentile": self.percentile}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        base = preset("default")
        model = ModelConfig.from_dict({**base.model.to_dict(), **d.get("model", {})})
        train = TrainConfig(**{**asdict(base.train), **d.get("train", {})})
        weights = LossWeights(**{**asdict(base.weights), **d.get("weights", {})})
        split = SplitSpec(**{**asdict(base.split), **d.get("split", {})})
        return cls(model=model, train=train, weights=weights, split=split,
                   percentile=d.get("percentile", base.percentile))


def preset(name: str) -> RunConfig:
    """Named starting configurations."""
    if name in ("default", "paper-table"):
        cfg = RunConfig(model=ModelConfig(), train=TrainConfig(),
                        weights=LossWeights(), split=SplitSpec())
        if name == "paper-table":
            cfg.weights = LossWeights(alpha=0.5, beta=3.0, gamma=1.5)
        return cfg
    if name == "paper-text":
        return RunConfig(model=ModelConfig(window_size=100), train=TrainConfig(),
                         weights=LossWeights(alpha=1.0, beta=1.5, gamma=1.2),
                         split=SplitSpec())
    raise ConfigError(f"unknown preset {name!r}; choices: {PRESETS}")


def load_config(path=None, preset_name: str = "default", overrides=()) -> RunConfig:
    """Assemble the effective config: preset, then file, then overrides."""
    cfg = preset(preset_name)
    if path is not None:
        with open(path) as fh:
            try:
                file_dict = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        merged = cfg.to_dict()
        for section, value in file_dict.items():
            if isinstance(value, dict):
                merged.setdefault(section, {}).update(value)
            else:
                merged[section] = value
        cfg = RunConfig.from_dict(merged)
    for item in overrides:
        cfg = apply_override(cfg, item)
    cfg.validate()
    return cfg


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: RunConfig, item: str) -> RunConfig:
    """Apply one ``section.field=value`` override (value parsed as JSON,
    falling back to a bare string)."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form section.field=value")
    key, raw = item.split("=", 1)
    value = _parse_value(raw)
    if key == "percentile":
        return replace(cfg, percentile=float(value))
    if "." not in key:
        raise ConfigError(f"override key {key!r} needs a section prefix")
    section, field_name = key.split(".", 1)
    sections = {"model": cfg.model, "train": cfg.train, "weights": cfg.weights,
                "split": cfg.split}
    if section not in sections:
        raise ConfigError(f"unknown config section {section!r}")
    target = sections[section]
    names = {f.name for f in fields(target)}
    if field_name not in names:
        raise ConfigError(f"unknown field {field_name!r} in section {section!r}")
    if section == "model" and field_name == "cnn_channels":
        value = tuple(value)
    updated = replace(target, **{field_name: value})
    return replace(cfg, **{section: updated})
