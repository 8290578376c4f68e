"""Experiment configuration and its INI file format.

Sections mirror the dataclasses below; every key is optional and falls
back to the default. Unknown sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field

from .scene import ValidationError


@dataclass
class GraphSection:
    k: int = 10
    scales: tuple = (5, 7)


@dataclass
class ModelSection:
    d_model: int = 64
    d_type: int = 16
    point_widths: tuple = (32, 64)
    rounds: int = 2
    heads: int = 4
    layers: int = 2
    neighborhood: int = 16
    anchors: int = 8  # 64 at benchmark scale
    decoder_hidden: int = 128
    k_modes: int = 6
    reg_weight: float = 1.0


@dataclass
class MetricsSection:
    horizons: tuple = (3.0, 5.0, 8.0)  # seconds
    thresholds: tuple = (2.0, 3.6, 6.0)  # meters


@dataclass
class TrainSection:
    lr: float = 1e-4
    weight_decay: float = 0.01
    clip: float = 1000.0
    epochs: int = 200
    # 22/24/26/28 of 30 epochs, rescaled to 200
    milestones: tuple = (147, 160, 173, 187)
    gamma: float = 0.5
    batch_size: int = 16  # 80 at benchmark scale
    seed: int = 0


@dataclass
class ExperimentConfig:
    graph: GraphSection = field(default_factory=GraphSection)
    model: ModelSection = field(default_factory=ModelSection)
    metrics: MetricsSection = field(default_factory=MetricsSection)
    train: TrainSection = field(default_factory=TrainSection)

    def validate(self) -> None:
        g, m, t = self.graph, self.model, self.train
        if g.k < 1:
            raise ValidationError("graph.k must be >= 1")
        if any(s < 2 for s in g.scales):
            raise ValidationError("graph.scales entries must be >= 2")
        if m.d_model < 1 or m.d_model % m.heads:
            raise ValidationError(f"model.d_model={m.d_model} must be a positive multiple of heads={m.heads}")
        if m.neighborhood < 1:
            raise ValidationError("model.neighborhood must be >= 1")
        if m.anchors < m.k_modes:
            raise ValidationError(f"model.anchors={m.anchors} is below k_modes={m.k_modes}")
        if m.k_modes < 1 or m.rounds < 0 or m.layers < 0:
            raise ValidationError("model.k_modes must be >= 1 and rounds/layers >= 0")
        if len(self.metrics.horizons) != len(self.metrics.thresholds) or not self.metrics.horizons:
            raise ValidationError("metrics.horizons and metrics.thresholds must pair up")
        if t.lr < 0 or t.weight_decay < 0 or t.clip <= 0:
            raise ValidationError("train.lr and train.weight_decay must be >= 0, train.clip > 0")
        if t.epochs < 0 or t.batch_size < 1:
            raise ValidationError("train.epochs must be >= 0 and train.batch_size >= 1")

    def to_dict(self) -> dict:
        return {name: _plain(dataclasses.asdict(getattr(self, name))) for name in _SECTIONS}

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        cfg = cls()
        for name, values in data.items():
            if name not in _SECTIONS:
                raise ValidationError(f"unknown config section [{name}]")
            section = getattr(cfg, name)
            for key, value in values.items():
                _assign(section, name, key, value)
        cfg.validate()
        return cfg

    def model_signature(self) -> dict:
        """Settings that fix parameter shapes; a checkpoint must agree on these."""
        return {"graph": _plain(dataclasses.asdict(self.graph)), "model": _plain(dataclasses.asdict(self.model))}


_SECTIONS = ("graph", "model", "metrics", "train")


def _plain(d: dict) -> dict:
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _coerce(kind, raw, where):
    try:
        if kind is tuple:
            if isinstance(raw, (list, tuple)):
                items = list(raw)
            else:
                items = [s for s in str(raw).replace(" ", "").split(",") if s]
            return tuple(float(s) if "." in str(s) or "e" in str(s).lower() else int(s) for s in items)
        if kind is int:
            if isinstance(raw, float) and not raw.is_integer():
                raise ValueError
            return int(raw)
        return kind(raw)
    except (TypeError, ValueError):
        raise ValidationError(f"{where}: cannot read {raw!r} as {kind.__name__}") from None


def _assign(section, name, key, raw):
    fields = {f.name: f for f in dataclasses.fields(section)}
    if key not in fields:
        raise ValidationError(f"unknown config key {name}.{key}")
    kind = type(getattr(type(section)(), key))
    setattr(section, key, _coerce(kind, raw, f"{name}.{key}"))


def config_to_ini(cfg: ExperimentConfig) -> str:
    parser = configparser.ConfigParser()
    for name, values in cfg.to_dict().items():
        parser[name] = {k: ", ".join(str(x) for x in v) if isinstance(v, list) else repr(v) if isinstance(v, float)
                        else str(v) for k, v in values.items()}
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_from_ini(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config: {exc}") from None
    return ExperimentConfig.from_dict({s: dict(parser[s]) for s in parser.sections()})


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return config_from_ini(fh.read())


def save_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_ini(cfg))
