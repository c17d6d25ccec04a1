"""Convolutional encoder and GAP + linear classifier shared by both pathways."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigurationError

#: Probabilities are clamped to this floor before the log in the CE loss.
PROB_EPS = 1e-12


@dataclass(frozen=True)
class BackboneConfig:
    in_channels: int = 3
    stage_channels: tuple[int, ...] = (32, 64, 128, 256)
    stride_per_stage: tuple[int, ...] = (2, 2, 2, 2)
    image_size: int = 64
    batch_norm: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stage_channels", tuple(self.stage_channels))
        object.__setattr__(self, "stride_per_stage", tuple(self.stride_per_stage))
        if len(self.stage_channels) < 2:
            raise ConfigurationError("backbone needs at least 2 stages")
        if len(self.stage_channels) != len(self.stride_per_stage):
            raise ConfigurationError("stage_channels and stride_per_stage differ in length")
        if any(c < 1 for c in self.stage_channels) or any(s < 1 for s in self.stride_per_stage):
            raise ConfigurationError("stage channels and strides must be positive")
        if self.image_size % self.stride_product:
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by the stride product {self.stride_product}"
            )

    @property
    def stride_product(self) -> int:
        p = 1
        for s in self.stride_per_stage:
            p *= s
        return p

    @property
    def feature_size(self) -> int:
        return self.image_size // self.stride_product

    @property
    def out_channels(self) -> int:
        return self.stage_channels[-1]


class Backbone(nn.Module):
    """Stack of conv-BN-ReLU stages followed by a GAP + linear head.

    The last stage ends in a ReLU so encoded features are nonnegative; the
    pattern map used for polar self-supervision relies on that.
    """

    def __init__(self, config: BackboneConfig, num_classes: int):
        super().__init__()
        if num_classes < 1:
            raise ConfigurationError(f"num_classes must be >= 1, got {num_classes}")
        self.config = config
        self.num_classes = num_classes
        stages = []
        c_in = config.in_channels
        for c_out, stride in zip(config.stage_channels, config.stride_per_stage):
            layers = [nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=not config.batch_norm)]
            if config.batch_norm:
                layers.append(nn.BatchNorm2d(c_out))
            layers.append(nn.ReLU(inplace=False))
            stages.append(nn.Sequential(*layers))
            c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.fc = nn.Linear(config.out_channels, num_classes)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_out", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        nn.init.normal_(self.fc.weight, std=0.01)
        nn.init.zeros_(self.fc.bias)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        """(B, 3, S, S) images -> (B, C, S/stride, S/stride) nonnegative features."""
        cfg = self.config
        if image.dim() != 4 or image.shape[1] != cfg.in_channels or image.shape[-2:] != (cfg.image_size,) * 2:
            raise ConfigurationError(
                f"expected input of shape (B, {cfg.in_channels}, {cfg.image_size}, {cfg.image_size}),"
                f" got {tuple(image.shape)}"
            )
        return self.stages(image)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        return self.fc(features.mean(dim=(2, 3)))

    def classify(self, features: torch.Tensor) -> torch.Tensor:
        """Class probabilities ``softmax(linear(GAP(features)))``."""
        return torch.softmax(self.logits(features), dim=1)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        return self.logits(self.encode(image))


def classification_loss(probs: torch.Tensor, one_hot: torch.Tensor, reduction: str = "mean") -> torch.Tensor:
    """Cross-entropy ``-sum(l * log y)`` per sample, reduced over the batch.

    ``reduction="sum"`` gives the summed form over the training set;
    ``"mean"`` (default) keeps the effective learning rate independent of the
    batch size. Probabilities are clamped at ``PROB_EPS`` before the log.
    """
    if probs.shape != one_hot.shape:
        raise ConfigurationError(f"prediction shape {tuple(probs.shape)} != label shape {tuple(one_hot.shape)}")
    per_sample = -(one_hot * torch.log(probs.clamp_min(PROB_EPS))).sum(dim=-1)
    if reduction == "mean":
        return per_sample.mean()
    if reduction == "sum":
        return per_sample.sum()
    if reduction == "none":
        return per_sample
    raise ConfigurationError(f"unknown reduction {reduction!r}")


def cross_entropy_from_logits(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Numerically stable equivalent of ``classification_loss(softmax(logits), one_hot)``."""
    return F.cross_entropy(logits, labels)
