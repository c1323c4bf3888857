"""Flat ``key = value`` configuration with dotted keys.

Keys are ``train.<field>``, ``net.<field>``, ``loss.<field>`` and
``data.<field>``; for example ``loss.lambda_gp = 10`` or ``net.dilations = 3,5,7``.
Unknown keys are rejected. Later sources override earlier ones.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .losses import LossWeights
from .model import NetConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    crop_size: int = 64
    stride: int = 16
    factor: int = 4
    train_fraction: float = 0.8
    val_fraction: float = 0.1
    test_fraction: float = 0.1
    split_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = TrainConfig()
    data: DataConfig = DataConfig()


def _sections(cfg: RunConfig):
    return {
        "train": cfg.train,
        "net": cfg.train.net,
        "loss": cfg.train.loss,
        "data": cfg.data,
    }


def flatten(cfg: RunConfig) -> dict[str, object]:
    out = {}
    for section, obj in _sections(cfg).items():
        for f in fields(obj):
            value = getattr(obj, f.name)
            if dataclasses.is_dataclass(value):
                continue
            out[f"{section}.{f.name}"] = value
    return out


def _coerce(raw, current):
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if isinstance(current, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        kind = type(current[0]) if current else int
        return tuple(kind(v) for v in text.replace("(", "").replace(")", "").split(",") if v.strip())
    return text


def apply(cfg: RunConfig, overrides: dict[str, object]) -> RunConfig:
    """Return ``cfg`` with dotted-key overrides applied."""
    known = flatten(cfg)
    updates: dict[str, dict] = {"train": {}, "net": {}, "loss": {}, "data": {}}
    for key, raw in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        section, name = key.split(".", 1)
        try:
            updates[section][name] = _coerce(raw, known[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    net = replace(cfg.train.net, **updates["net"])
    loss = replace(cfg.train.loss, **updates["loss"])
    train = replace(cfg.train, net=net, loss=loss, **updates["train"])
    data = replace(cfg.data, **updates["data"])
    return RunConfig(train=train, data=data)


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load(path=None, overrides: dict[str, object] | None = None, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    if path is not None:
        cfg = apply(cfg, parse_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg = apply(cfg, overrides)
    return cfg


def dump(cfg: RunConfig) -> str:
    lines = []
    for key, value in flatten(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# Desk-scale network used by the scripts and the acceptance suite: the same
# topology as the defaults, shrunk to run on a single CPU core.
DESK_NET = NetConfig(K=2, C=16, rdb_layers=2, rdb_growth=8, encoder_width=16, decoder_width=16, mlp_hidden=16)


def desk_config(**train_overrides) -> TrainConfig:
    return replace(TrainConfig(net=DESK_NET, loss=LossWeights(), batch_size=8), **train_overrides)
