"""Declarative run configuration with strict key checking.

A config document is a tree with the sections ``data``, ``backbone``,
``sda``, ``gae``, ``gat``, ``trainer`` and ``ablation``. Every key is
optional; unknown keys are rejected with their dotted path.
"""

from __future__ import annotations

import json
import types
import typing
from dataclasses import MISSING, asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

import yaml

from .backbone import BackboneConfig
from .data import AugmentConfig
from .exceptions import ConfigurationError
from .model import Components, LossWeights
from .trainer import TrainConfig


@dataclass
class DataSection:
    num_classes: int = 80
    per_class_train: int = 3
    per_class_test: int = 3
    image_size: int = 64
    seed: int = 7
    max_rotation_deg: float = 15.0


@dataclass
class BackboneSection:
    stage_channels: list[int] = field(default_factory=lambda: [32, 64, 128, 256])
    stride_per_stage: list[int] = field(default_factory=lambda: [2, 2, 2, 2])
    batch_norm: bool = True


@dataclass
class SdaSection:
    enabled: bool = True
    sigma: float = 0.25
    grid_side: int = 31
    cam_feedback: bool = False
    generator_lr_scale: float = 0.03


@dataclass
class GaeSection:
    enabled: bool = True
    masked: bool = True
    sd_mode: bool = True
    cartesian_mode: bool = False


@dataclass
class GatSection:
    enabled: bool = True
    bidirectional: bool = False
    warmup_epochs: int = 0


@dataclass
class AugmentSection:
    crop: bool = False
    crop_scale: float = 7 / 8
    erase: bool = False
    flip: bool = False
    color_jitter: bool = False


@dataclass
class TrainerSection:
    epochs: int = 60
    batch_size: int = 16
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_decay: float = 0.9
    decay_interval_epochs: int = 5
    seed: int = 0
    deterministic: bool = True
    loss_reduction: str = "mean"
    alpha: float = 0.3
    beta: float = 0.5
    gamma: float = 0.5
    aux_warped_ce: bool = True
    aux_weight: float = 1.0
    eval_batch_size: int = 64
    augment: AugmentSection = field(default_factory=AugmentSection)


@dataclass
class SweepSection:
    alphas: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5])
    betas: list[float] = field(default_factory=lambda: [0.25, 0.5, 1.0])
    gammas: list[float] = field(default_factory=lambda: [0.25, 0.5, 1.0])


@dataclass
class AblationSection:
    rows: list[str] = field(
        default_factory=lambda: [
            "baseline", "+SDA", "+GAE", "+GAE+GAT", "full", "cam_feedback", "unmasked", "raw_angle", "cartesian",
        ]
    )
    seeds: list[int] = field(default_factory=lambda: [0])
    subset_classes: typing.Optional[int] = None
    sweep: typing.Optional[SweepSection] = None


@dataclass
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    backbone: BackboneSection = field(default_factory=BackboneSection)
    sda: SdaSection = field(default_factory=SdaSection)
    gae: GaeSection = field(default_factory=GaeSection)
    gat: GatSection = field(default_factory=GatSection)
    trainer: TrainerSection = field(default_factory=TrainerSection)
    ablation: AblationSection = field(default_factory=AblationSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def components(self) -> Components:
        return Components(
            sda=self.sda.enabled,
            gae=self.gae.enabled,
            gat=self.gat.enabled,
            aux_warped_ce=self.trainer.aux_warped_ce,
            cam_feedback=self.sda.cam_feedback,
            masked=self.gae.masked,
            sd_mode=self.gae.sd_mode,
            cartesian_mode=self.gae.cartesian_mode,
            gat_bidirectional=self.gat.bidirectional,
        )

    def train_config(self) -> TrainConfig:
        t = self.trainer
        a = t.augment
        return TrainConfig(
            epochs=t.epochs,
            batch_size=t.batch_size,
            lr=t.lr,
            momentum=t.momentum,
            weight_decay=t.weight_decay,
            lr_decay=t.lr_decay,
            decay_interval_epochs=t.decay_interval_epochs,
            seed=t.seed,
            deterministic=t.deterministic,
            loss_reduction=t.loss_reduction,
            gat_warmup_epochs=self.gat.warmup_epochs,
            generator_lr_scale=self.sda.generator_lr_scale,
            weights=LossWeights(alpha=t.alpha, beta=t.beta, gamma=t.gamma, aux=t.aux_weight),
            components=self.components(),
            backbone=BackboneConfig(
                stage_channels=tuple(self.backbone.stage_channels),
                stride_per_stage=tuple(self.backbone.stride_per_stage),
                image_size=self.data.image_size,
                batch_norm=self.backbone.batch_norm,
            ),
            augment=AugmentConfig(
                crop=a.crop, crop_scale=a.crop_scale, erase=a.erase, flip=a.flip, color_jitter=a.color_jitter
            ),
            sigma=self.sda.sigma,
            grid_side=self.sda.grid_side,
            eval_batch_size=t.eval_batch_size,
        )


def _check_value(value, tp, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _check_value(value, args[0], path)
    if is_dataclass(tp):
        return _build(tp, value, path)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigurationError(f"{path}: expected a list, got {type(value).__name__}")
        return [_check_value(v, item, f"{path}[{i}]") for i, v in enumerate(value)]
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigurationError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigurationError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigurationError(f"{path}: unsupported type {tp}")  # pragma: no cover


def _build(cls, data, path: str = ""):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    for key in data:
        if key not in known:
            where = f"{path}.{key}" if path else str(key)
            raise ConfigurationError(f"unknown config key '{where}'")
    kwargs = {}
    for f in fields(cls):
        if f.name in data:
            where = f"{path}.{f.name}" if path else f.name
            kwargs[f.name] = _check_value(data[f.name], hints[f.name], where)
        elif f.default is MISSING and f.default_factory is MISSING:  # pragma: no cover
            raise ConfigurationError(f"missing config key '{path}.{f.name}'")
    return cls(**kwargs)


def parse_config(data: dict | None) -> RunConfig:
    """Validate a config tree; raises ``ConfigurationError`` naming the offending key."""
    cfg = _build(RunConfig, data or {})
    # surface semantic errors (bad counts, strides, weights) before any work starts
    try:
        cfg.train_config()
    except ConfigurationError as exc:
        raise ConfigurationError(f"trainer/backbone: {exc}") from exc
    if cfg.data.num_classes < 2 or cfg.data.per_class_train < 1 or cfg.data.image_size < 32:
        raise ConfigurationError("data: need num_classes >= 2, per_class_train >= 1 and image_size >= 32")
    if cfg.sda.sigma <= 0:
        raise ConfigurationError(f"sda.sigma: must be > 0, got {cfg.sda.sigma}")
    if cfg.sda.grid_side < 8:
        raise ConfigurationError(f"sda.grid_side: must be >= 8, got {cfg.sda.grid_side}")
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"cannot parse config {path}: {exc}") from exc
    return parse_config(data)


def echo_config(cfg: RunConfig, out_dir: str | Path) -> Path:
    """Write the fully resolved config (defaults included) next to the outputs."""
    path = Path(out_dir) / "config.json"
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
