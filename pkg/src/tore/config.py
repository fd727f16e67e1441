"""Run configuration: strict JSON with unknown-key rejection."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .gtr import ModelConfig
from .transformer import LayerConfig


@dataclass
class OptimConfig:
    name: str = "adamw"
    lr: float = 1e-4
    weight_decay: float = 1e-4
    grad_clip_norm: float = 0.3

    def __post_init__(self):
        if self.name != "adamw":
            raise ValueError(f"unsupported optimizer {self.name!r}")
        if min(self.lr, self.weight_decay, self.grad_clip_norm) <= 0:
            raise ValueError("optimizer hyperparameters must be positive")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    steps: int = 2000
    batch: int = 8
    seed: int = 0
    data: str = ""
    out_dir: str = ""

    def __post_init__(self):
        if self.steps <= 0 or self.batch <= 0:
            raise ValueError("steps and batch must be positive")


def _check_keys(d: dict, cls, where: str) -> None:
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys in {where}: {sorted(unknown)}")


def _layer_config(value) -> LayerConfig:
    if isinstance(value, dict):
        _check_keys(value, LayerConfig, "layer config")
        return LayerConfig(**value)
    return LayerConfig(*value)


def config_from_dict(raw: dict) -> RunConfig:
    _check_keys(raw, RunConfig, "run config")
    kwargs = dict(raw)
    if "model" in kwargs:
        m = dict(kwargs["model"])
        _check_keys(m, ModelConfig, "model config")
        for key in ("enc", "dec", "nsr"):
            if key in m:
                m[key] = _layer_config(m[key])
        if "encoder_blocks" in m:
            m["encoder_blocks"] = tuple(_layer_config(b) for b in m["encoder_blocks"])
        kwargs["model"] = ModelConfig(**m)
    if "optimizer" in kwargs:
        o = dict(kwargs["optimizer"])
        _check_keys(o, OptimConfig, "optimizer config")
        kwargs["optimizer"] = OptimConfig(**o)
    return RunConfig(**kwargs)


def config_to_dict(cfg: RunConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["model"]["encoder_blocks"] = [list(dataclasses.astuple(b)) for b in cfg.model.encoder_blocks]
    for key in ("enc", "dec", "nsr"):
        d["model"][key] = list(dataclasses.astuple(getattr(cfg.model, key)))
    return d


def load_config(path) -> RunConfig:
    return config_from_dict(json.loads(Path(path).read_text()))
