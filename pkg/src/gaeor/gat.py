"""Geometric attribute transfer: pooled-feature distillation between pathways."""

from __future__ import annotations

import torch

from .exceptions import ConfigurationError


def gap(features: torch.Tensor) -> torch.Tensor:
    """Global average pooling (B, C, H, W) -> (B, C)."""
    return features.mean(dim=(-2, -1))


def _safe_norm(v: torch.Tensor) -> torch.Tensor:
    # sqrt has an infinite slope at 0; route exact zeros through a zero gradient
    sq = (v * v).sum(dim=-1)
    zero = sq == 0
    return torch.where(zero, torch.zeros_like(sq), torch.sqrt(torch.where(zero, torch.ones_like(sq), sq)))


def transfer_loss(T: torch.Tensor, F: torch.Tensor, bidirectional: bool = False, reduction: str = "mean"):
    """Euclidean distance between pooled amplified features and pooled raw features.

    ``T`` acts as the teacher and is detached unless ``bidirectional``.
    """
    if T.shape[1] != F.shape[1]:
        raise ConfigurationError(f"channel mismatch: T has {T.shape[1]}, F has {F.shape[1]}")
    teacher = gap(T) if bidirectional else gap(T).detach()
    per = _safe_norm(teacher - gap(F))
    if reduction == "mean":
        return per.mean()
    if reduction == "sum":
        return per.sum()
    return per
