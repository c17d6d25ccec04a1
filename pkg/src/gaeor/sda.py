"""Saliency-guided detail amplification.

A 1x1-conv + sigmoid generator turns backbone features into a feedback map
``D``. ``build_grid`` converts ``D`` into a non-uniform sampling grid whose
every cell is the Gaussian-weighted, saliency-weighted centroid of the
*source* coordinates around it, so high-saliency regions receive more output
pixels. ``resample`` then reads the input image through that grid with
bilinear interpolation. Everything is differentiable end to end.

Coordinates are normalised to [0, 1] with the corner-aligned convention:
cell ``i`` of an ``n``-cell axis sits at ``i / (n - 1)``.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .exceptions import ConfigurationError, NumericError

DEFAULT_SIGMA = 0.25
DEFAULT_GRID_SIDE = 31


class FeedbackGenerator(nn.Module):
    """1x1 convolution followed by a sigmoid; zero-initialised so D starts at 0.5."""

    def __init__(self, in_channels: int):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, 1, kernel_size=1)
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.proj(features)).squeeze(1)


def generate_feedback(features: torch.Tensor, generator: FeedbackGenerator) -> torch.Tensor:
    """(B, C, H, W) features -> (B, H, W) feedback map in (0, 1)."""
    return generator(features)


def regularization_loss(D: torch.Tensor) -> torch.Tensor:
    """Spatial mean of the feedback map, averaged over the batch."""
    return D.mean()


def padding_radius(sigma: float, grid_side: int) -> int:
    return int(math.ceil(3.0 * sigma * grid_side))


def _axis_kernel(grid_side: int, sigma: float, radius: int, dtype, device) -> torch.Tensor:
    """(G, G + 2r) truncated Gaussian between output cells and padded source cells."""
    out = torch.arange(grid_side, dtype=dtype, device=device)
    src = torch.arange(-radius, grid_side + radius, dtype=dtype, device=device)
    diff = out[:, None] - src[None, :]
    k = torch.exp(-((diff / (grid_side - 1)) ** 2) / (2.0 * sigma**2))
    # compact support: every output cell sees a window symmetric about itself
    return torch.where(diff.abs() <= radius, k, torch.zeros_like(k))


def coarse_grid(D: torch.Tensor, sigma: float = DEFAULT_SIGMA, grid_side: int = DEFAULT_GRID_SIDE) -> torch.Tensor:
    """Saliency-weighted centroid map on a ``grid_side`` square; returns (B, 2, G, G).

    Channel 0 holds the x source coordinate, channel 1 the y coordinate.
    """
    if sigma <= 0:
        raise ConfigurationError(f"sigma must be > 0, got {sigma}")
    if grid_side < 8:
        raise ConfigurationError(f"grid_side must be >= 8, got {grid_side}")
    if D.dim() == 2:
        D = D[None]
    G = grid_side
    r = padding_radius(sigma, G)
    d = F.interpolate(D[:, None], size=(G, G), mode="bilinear", align_corners=True)
    d = F.pad(d, (r, r, r, r), mode="replicate")[:, 0]  # (B, G+2r, G+2r) indexed [h, w]

    k = _axis_kernel(G, sigma, r, D.dtype, D.device)
    src = torch.arange(-r, G + r, dtype=D.dtype, device=D.device) / (G - 1)
    # separable kernel: sum_{h,w} K(y,h) K(x,w) d[h,w] f(h,w) = (K d K^T)[y,x]
    denom = k @ d @ k.T
    num_x = k @ (d * src[None, None, :]) @ k.T
    num_y = k @ (d * src[None, :, None]) @ k.T
    return torch.stack([num_x / denom, num_y / denom], dim=1)


def build_grid(
    D: torch.Tensor,
    out_size: int,
    sigma: float = DEFAULT_SIGMA,
    grid_side: int = DEFAULT_GRID_SIDE,
) -> torch.Tensor:
    """Sampling grid (B, 2, out_size, out_size) with coordinates clamped to [0, 1]."""
    g = coarse_grid(D, sigma, grid_side)
    g = F.interpolate(g, size=(out_size, out_size), mode="bilinear", align_corners=True)
    return g.clamp(0.0, 1.0)


def identity_grid(batch: int, size: int, dtype=torch.float32, device=None) -> torch.Tensor:
    lin = torch.linspace(0.0, 1.0, size, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(lin, lin, indexing="ij")
    return torch.stack([gx, gy])[None].expand(batch, -1, -1, -1).contiguous()


def _snap(p: torch.Tensor, n: int) -> torch.Tensor:
    """Round positions within rounding noise of a pixel centre; gradient passes straight through."""
    tol = 8 * torch.finfo(p.dtype).eps * n
    r = p.detach().round()
    offset = torch.where((p.detach() - r).abs() <= tol, r - p.detach(), torch.zeros_like(p))
    return p + offset


def resample(image: torch.Tensor, grid: torch.Tensor) -> torch.Tensor:
    """Bilinearly read ``image`` (B, C, H, W) at ``grid`` (B, 2, H', W') locations.

    Each output value is the distance-weighted sum of the four pixels around
    the mapped point; gradients flow to both the image and the grid.
    """
    B, C, H, W = image.shape
    if grid.dim() != 4 or grid.shape[0] != B or grid.shape[1] != 2:
        raise ConfigurationError(f"grid shape {tuple(grid.shape)} does not match image batch {B}")
    if not torch.isfinite(grid.detach()).all():
        raise NumericError("sampling grid contains non-finite values")
    Ho, Wo = grid.shape[-2:]
    px = _snap(grid[:, 0].clamp(0.0, 1.0) * (W - 1), W)
    py = _snap(grid[:, 1].clamp(0.0, 1.0) * (H - 1), H)
    x0 = px.detach().floor().clamp(0, max(W - 2, 0))
    y0 = py.detach().floor().clamp(0, max(H - 2, 0))
    wx = (px - x0)[:, None]
    wy = (py - y0)[:, None]
    x0 = x0.long()
    y0 = y0.long()
    x1 = (x0 + 1).clamp(max=W - 1)
    y1 = (y0 + 1).clamp(max=H - 1)

    flat = image.reshape(B, C, H * W)

    def tap(yi, xi):
        idx = (yi * W + xi).reshape(B, 1, Ho * Wo).expand(B, C, Ho * Wo)
        return flat.gather(2, idx).reshape(B, C, Ho, Wo)

    top = tap(y0, x0) * (1 - wx) + tap(y0, x1) * wx
    bottom = tap(y1, x0) * (1 - wx) + tap(y1, x1) * wx
    return top * (1 - wy) + bottom * wy


class SaliencyAmplifier(nn.Module):
    """Feedback generator plus the fixed grid construction."""

    def __init__(self, in_channels: int, sigma: float = DEFAULT_SIGMA, grid_side: int = DEFAULT_GRID_SIDE):
        super().__init__()
        if sigma <= 0:
            raise ConfigurationError(f"sigma must be > 0, got {sigma}")
        if grid_side < 8:
            raise ConfigurationError(f"grid_side must be >= 8, got {grid_side}")
        self.generator = FeedbackGenerator(in_channels)
        self.sigma = sigma
        self.grid_side = grid_side

    def warp(self, image: torch.Tensor, D: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        grid = build_grid(D, image.shape[-1], self.sigma, self.grid_side)
        return resample(image, grid), grid

    def forward(self, image: torch.Tensor, features: torch.Tensor):
        D = self.generator(features)
        warped, grid = self.warp(image, D)
        return D, grid, warped
