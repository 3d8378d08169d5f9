"""Detector and training configuration, with flat ``key = value`` text round-trips."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

VARIANTS = ("baseline", "sp", "bp", "full")


@dataclass(frozen=True)
class DetectorConfig:
    resolution: int = 128
    levels: int = 3
    width: int = 32
    num_classes: int = 3
    variant: str = "full"
    ba_mode: str = "concat"
    stem_channels: int = 8
    mid_channels: int = 16
    # every conv feeds a batch norm, so weight scale sets the effective step size at a fixed lr
    init_gain: float = 0.3
    head_gain: float = 0.03
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1 or self.width < 1 or self.num_classes < 1:
            raise ValueError("levels, width and num_classes must be >= 1")
        if self.resolution % (2 ** (self.levels + 1)):
            raise ValueError(f"resolution {self.resolution} must be divisible by 2^(levels+1) = {2 ** (self.levels + 1)}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not (self.init_gain > 0 and self.head_gain > 0):
            raise ValueError("init gains must be positive")

    @property
    def strides(self):
        return [4 * 2 ** l for l in range(self.levels)]

    @property
    def head_channels(self):
        return 5 + self.num_classes


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.0001
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32
    steps: int = 2000
    seed: int = 0

    def __post_init__(self):
        if not (self.lr > 0 and self.momentum > 0 and self.weight_decay > 0 and self.batch_size > 0 and self.steps > 0):
            raise ValueError("all training constants must be positive")


def _coerce(value: str, kind):
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value


def config_to_text(*configs) -> str:
    lines = []
    for cfg in configs:
        prefix = "train." if isinstance(cfg, TrainConfig) else "model."
        lines += [f"{prefix}{f.name} = {getattr(cfg, f.name)}" for f in dataclasses.fields(cfg)]
    return "\n".join(lines) + "\n"


def read_key_values(path, valid_keys=None) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment. Unknown keys raise ``KeyError``."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if valid_keys is not None and key not in valid_keys:
            raise KeyError(f"{path}:{lineno}: unknown key {key!r}; valid keys: {', '.join(sorted(valid_keys))}")
        out[key] = value
    return out


def configs_from_text(path):
    values = read_key_values(path)
    model, train = {}, {}
    types = {f.name: f.type for f in dataclasses.fields(DetectorConfig)}
    ttypes = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    for key, value in values.items():
        section, _, name = key.partition(".")
        table, target = (types, model) if section == "model" else (ttypes, train)
        if name not in table:
            raise KeyError(f"unknown config key {key!r}")
        kind = {"int": int, "float": float}.get(table[name], str)
        target[name] = _coerce(value, kind)
    return DetectorConfig(**model), TrainConfig(**train)
