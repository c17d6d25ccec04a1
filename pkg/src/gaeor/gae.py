"""Geometric attribute encoding: polar self-supervision on amplified features.

Cell indices follow a 1-based ``(x, y)`` convention: ``x`` is the column in
``1..W`` and ``y`` the row in ``1..H``. Tensors are stored row-major, so cell
``(m, n)`` lives at ``tensor[..., n - 1, m - 1]``.
"""

from __future__ import annotations

import logging
import math
from typing import NamedTuple

import torch
from torch import nn

from .exceptions import ConfigurationError

log = logging.getLogger(__name__)

HEAD_HIDDEN = 64


class PatternMap(NamedTuple):
    values: torch.Tensor  # (B, H, W) channel sum
    mu: torch.Tensor  # (B,)
    mask: torch.Tensor  # (B, H, W) bool, values > mu


class PolarField(NamedTuple):
    reference: torch.Tensor  # (B, 2) long, 1-based (x_max, y_max)
    rho: torch.Tensor  # (B, H, W)
    theta: torch.Tensor  # (B, H, W)


class PolarPrediction(NamedTuple):
    rho_hat: torch.Tensor
    theta_hat: torch.Tensor


class GaeLoss(NamedTuple):
    l_dis: torch.Tensor
    l_ang: torch.Tensor
    l_gae: torch.Tensor


def pattern_map(T: torch.Tensor) -> PatternMap:
    """Channel-sum ``T`` (B, C, H, W) and threshold at its spatial mean."""
    with torch.no_grad():
        M = T.sum(dim=1)
        mu = M.mean(dim=(1, 2))
        mask = M > mu[:, None, None]
    return PatternMap(M, mu, mask)


def locate_reference(pm: PatternMap) -> torch.Tensor:
    """1-based ``(x_max, y_max)`` of the largest pattern-map cell per sample.

    Ties resolve to the first cell in row-major order.
    """
    M = pm.values
    W = M.shape[-1]
    flat = M.detach().reshape(M.shape[0], -1).argmax(dim=1)
    return torch.stack([flat % W + 1, flat // W + 1], dim=1)


def _as_reference(reference, batch: int | None = None) -> torch.Tensor:
    ref = torch.as_tensor(reference, dtype=torch.long)
    if ref.dim() == 1:
        ref = ref[None]
    if batch is not None and ref.shape[0] != batch:
        raise ConfigurationError(f"reference batch {ref.shape[0]} != feature batch {batch}")
    return ref


def polar_targets(reference, H: int, W: int, dtype=torch.float64) -> PolarField:
    """Normalised radius and angle of every cell relative to the reference cell."""
    ref = _as_reference(reference)
    if ((ref[:, 0] < 1) | (ref[:, 0] > W) | (ref[:, 1] < 1) | (ref[:, 1] > H)).any():
        raise ConfigurationError(f"reference {ref.tolist()} outside a {W}x{H} grid")
    n = torch.arange(1, H + 1, dtype=dtype)[:, None]
    m = torch.arange(1, W + 1, dtype=dtype)[None, :]
    dx = ref[:, 0].to(dtype)[:, None, None] - m
    dy = ref[:, 1].to(dtype)[:, None, None] - n
    rho = torch.sqrt(dx**2 + dy**2) / math.sqrt(W**2 + H**2)
    theta = (torch.atan2(dy, dx) + math.pi) / (2 * math.pi)
    return PolarField(ref, rho, theta)


def cartesian_targets(reference, H: int, W: int, dtype=torch.float64) -> PolarField:
    """Absolute normalised cell coordinates, packed in the polar field slots.

    Used only by the Cartesian ablation: ``rho`` holds x and ``theta`` holds y.
    """
    ref = _as_reference(reference)
    B = ref.shape[0]
    xs = torch.linspace(0.0, 1.0, W, dtype=dtype)[None, None, :].expand(B, H, W)
    ys = torch.linspace(0.0, 1.0, H, dtype=dtype)[None, :, None].expand(B, H, W)
    return PolarField(ref, xs.contiguous(), ys.contiguous())


def loss_mask(pm: PatternMap, reference: torch.Tensor, masked: bool = True) -> torch.Tensor:
    """Above-mean cells (or all cells when ``masked`` is False), minus the reference cell.

    The reference is dropped because its angle is ``atan2(0, 0)``.
    """
    mask = pm.mask.clone() if masked else torch.ones_like(pm.mask)
    idx = torch.arange(mask.shape[0])
    mask[idx, reference[:, 1] - 1, reference[:, 0] - 1] = False
    return mask


class PolarHead(nn.Module):
    """Per-cell MLP on ``[T_H, T_O]``: linear -> ReLU -> linear -> sigmoid."""

    def __init__(self, in_channels: int, hidden: int = HEAD_HIDDEN):
        super().__init__()
        self.net = nn.Sequential(
            nn.Linear(2 * in_channels, hidden),
            nn.ReLU(),
            nn.Linear(hidden, 2),
            nn.Sigmoid(),
        )
        self.in_channels = in_channels

    def forward(self, pairs: torch.Tensor) -> torch.Tensor:
        return self.net(pairs)


def predict_polar(T: torch.Tensor, reference, head: PolarHead) -> PolarPrediction:
    """Predict (rho, theta) for every cell from the reference vector and the cell vector."""
    B, C, H, W = T.shape
    if head.in_channels != C:
        raise ConfigurationError(f"head expects {head.in_channels} channels, features have {C}")
    ref = _as_reference(reference, B).to(T.device)
    t_h = T[torch.arange(B, device=T.device), :, ref[:, 1] - 1, ref[:, 0] - 1]  # (B, C)
    pairs = torch.cat([t_h[:, :, None, None].expand(B, C, H, W), T], dim=1)
    out = head(pairs.permute(0, 2, 3, 1))  # (B, H, W, 2)
    return PolarPrediction(out[..., 0], out[..., 1])


def _masked_mean(values: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample mean of ``values`` over ``mask``; zero where the mask is empty."""
    w = mask.to(values.dtype)
    count = w.sum(dim=(-2, -1))
    total = (values * w).sum(dim=(-2, -1))
    return total / count.clamp_min(1.0), count > 0


def _warn_empty(nonempty: torch.Tensor) -> None:
    if not bool(nonempty.all()):
        log.warning("%d sample(s) with an empty attention mask contribute zero loss", int((~nonempty).sum()))


def distance_loss(pred: PolarPrediction, targets: PolarField, mask: torch.Tensor, reduction: str = "mean"):
    """Masked mean of ``|rho_hat - rho|``."""
    per, nonempty = _masked_mean((pred.rho_hat - targets.rho.to(pred.rho_hat)).abs(), mask)
    _warn_empty(nonempty)
    return per.mean() if reduction == "mean" else per


def angle_loss(
    pred: PolarPrediction,
    targets: PolarField,
    mask: torch.Tensor,
    deviation: bool = True,
    reduction: str = "mean",
):
    """Masked mean absolute deviation of the angle errors ``|theta_hat - theta|``.

    With ``deviation=False`` the plain masked mean error is returned instead
    (the raw-angle ablation).
    """
    delta = (pred.theta_hat - targets.theta.to(pred.theta_hat)).abs()
    mean_delta, nonempty = _masked_mean(delta, mask)
    _warn_empty(nonempty)
    if deviation:
        per, _ = _masked_mean((delta - mean_delta[:, None, None]).abs(), mask)
    else:
        per = mean_delta
    return per.mean() if reduction == "mean" else per


def gae_loss(pred: PolarPrediction, targets: PolarField, mask: torch.Tensor, deviation: bool = True) -> GaeLoss:
    l_dis = distance_loss(pred, targets, mask)
    l_ang = angle_loss(pred, targets, mask, deviation=deviation)
    return GaeLoss(l_dis, l_ang, l_dis + l_ang)


def debug_records(pm: PatternMap, reference: torch.Tensor, pred: PolarPrediction, targets: PolarField, mask):
    """One dict per image: reference cell, masked count, mean |rho error|, mean angle error."""
    with torch.no_grad():
        d_rho, _ = _masked_mean((pred.rho_hat - targets.rho.to(pred.rho_hat)).abs(), mask)
        d_theta, _ = _masked_mean((pred.theta_hat - targets.theta.to(pred.theta_hat)).abs(), mask)
        counts = mask.sum(dim=(-2, -1))
    return [
        {
            "x_max": int(reference[b, 0]),
            "y_max": int(reference[b, 1]),
            "masked_cells": int(counts[b]),
            "mean_abs_rho_err": float(d_rho[b]),
            "mean_delta_theta": float(d_theta[b]),
        }
        for b in range(reference.shape[0])
    ]
