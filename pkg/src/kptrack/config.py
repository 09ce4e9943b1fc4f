"""Flat key-value run configuration covering every module.

A config file is plain text, one "section.key = value" per line (blank lines
and #-comments allowed); the same dotted keys work as command-line
overrides. Unknown keys are rejected by name. Label geometry (map size,
stride, stage count) is derived from the model section rather than exposed,
so the two can never disagree.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .data import AugConfig, SynthConfig
from .labels import LabelConfig
from .loss import LossConfig
from .model import ModelConfig
from .track import TrackHyper
from .train import TrainConfig


@dataclass
class DataConfig:
    """Where sequences come from: a folder dataset if root is set,
    otherwise n_sequences synthetic ones seeded from base_seed."""

    root: str = ""
    n_sequences: int = 8
    base_seed: int = 100


# keys whose values are derived from the model section
_DERIVED = {"labels.map_size", "labels.stride", "labels.n_stages"}


@dataclass
class RunConfig:
    model: ModelConfig
    labels: LabelConfig
    loss: LossConfig
    synth: SynthConfig
    aug: AugConfig
    train: TrainConfig
    track: TrackHyper
    data: DataConfig

    def resolved(self) -> "RunConfig":
        """Copy with the derived label geometry synced to the model."""
        labels = dataclasses.replace(
            self.labels, map_size=self.model.search_feat,
            stride=self.model.stride, n_stages=self.model.n_stages)
        return dataclasses.replace(self, labels=labels)


def default_config() -> RunConfig:
    return RunConfig(model=ModelConfig(), labels=LabelConfig(),
                     loss=LossConfig(), synth=SynthConfig(), aug=AugConfig(),
                     train=TrainConfig(), track=TrackHyper(),
                     data=DataConfig()).resolved()


def config_keys(cfg: RunConfig) -> list[str]:
    """Every settable dotted key, in section then field order."""
    keys = []
    for section in dataclasses.fields(cfg):
        for f in dataclasses.fields(getattr(cfg, section.name)):
            key = f"{section.name}.{f.name}"
            if key not in _DERIVED:
                keys.append(key)
    return keys


def _get(cfg: RunConfig, key: str):
    section, _, field = key.partition(".")
    return getattr(getattr(cfg, section), field)


def _parse_value(text: str, current):
    """Coerce `text` to the type of the value it replaces."""
    text = text.strip()
    if isinstance(current, bool):
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    return text


def set_key(cfg: RunConfig, key: str, value: str) -> RunConfig:
    """New config with one dotted key replaced; unknown keys are rejected."""
    if key in _DERIVED:
        raise ValueError(f"config key {key!r} is derived from the model "
                         "section and cannot be set")
    if key not in config_keys(cfg):
        raise ValueError(f"unknown config key {key!r}")
    section, _, field = key.partition(".")
    try:
        parsed = _parse_value(value, _get(cfg, key))
    except ValueError as e:
        raise ValueError(f"bad value for {key!r}: {e}")
    new_section = dataclasses.replace(getattr(cfg, section),
                                      **{field: parsed})
    return dataclasses.replace(cfg, **{section: new_section})


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply repeated "key=value" strings in order."""
    for item in overrides or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"override {item!r} is not of the form "
                             "key=value")
        cfg = set_key(cfg, key.strip(), value)
    return cfg.resolved()


def load_config(path=None, overrides=None) -> RunConfig:
    """Defaults, then the file (if any), then overrides; fully resolved."""
    cfg = default_config()
    if path is not None:
        for ln, raw in enumerate(Path(path).read_text().splitlines(),
                                 start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"{path}:{ln}: expected key = value, "
                                 f"got {raw!r}")
            try:
                cfg = set_key(cfg, key.strip(), value)
            except ValueError as e:
                raise ValueError(f"{path}:{ln}: {e}")
    return apply_overrides(cfg, overrides)


def save_config(path, cfg: RunConfig) -> None:
    """Persist every settable key with its resolved value."""
    lines = []
    for key in config_keys(cfg):
        lines.append(f"{key} = {_get(cfg, key)}")
    Path(path).write_text("\n".join(lines) + "\n")
