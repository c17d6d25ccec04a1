"""Independent oracles: finite-difference gradient checks and scalar-loop recomputations.

Nothing here imports the vectorised implementations it is meant to check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch

REL_THRESHOLD = 1e-4
ABS_FALLBACK = 1e-7
FD_STEP = 1e-5
MAX_COORDS = 256


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_coordinate: tuple[int, ...] | None
    passed: bool
    checked: int = 0
    message: str = ""

    def __str__(self) -> str:
        state = "PASS" if self.passed else "FAIL"
        return f"{state} max_rel_err={self.max_rel_error:.3e} at {self.worst_coordinate} ({self.checked} coords) {self.message}".rstrip()


def autograd_grad(fn: Callable[[torch.Tensor], torch.Tensor], x: torch.Tensor) -> torch.Tensor:
    x = x.detach().clone().requires_grad_(True)
    out = fn(x)
    if not out.requires_grad:
        return torch.zeros_like(x)
    (g,) = torch.autograd.grad(out, x, allow_unused=True)
    return torch.zeros_like(x) if g is None else g.detach()


def grad_check(
    scalar_fn: Callable[[torch.Tensor], torch.Tensor],
    input_tensor: torch.Tensor,
    analytic_grad: torch.Tensor | None = None,
    eps: float = FD_STEP,
    threshold: float = REL_THRESHOLD,
    abs_fallback: float = ABS_FALLBACK,
    max_coords: int = MAX_COORDS,
    seed: int = 0,
) -> GradCheckReport:
    """Compare ``analytic_grad`` with central differences of ``scalar_fn``.

    Evaluation is in float64. Tensors with more than ``max_coords`` entries
    are checked on a seeded random subset. A coordinate counts as an error
    only if its absolute error is at least ``abs_fallback``.
    """
    x = input_tensor.detach().to(torch.float64).clone()
    if analytic_grad is None:
        analytic_grad = autograd_grad(scalar_fn, x)
    g = analytic_grad.detach().to(torch.float64).reshape(-1)
    n = x.numel()
    if n > max_coords:
        coords = np.sort(np.random.default_rng(seed).choice(n, size=max_coords, replace=False))
    else:
        coords = np.arange(n)

    flat = x.reshape(-1)
    worst, worst_idx = 0.0, None
    with torch.no_grad():
        for i in coords:
            orig = flat[i].item()
            flat[i] = orig + eps
            fp = float(scalar_fn(x))
            flat[i] = orig - eps
            fm = float(scalar_fn(x))
            flat[i] = orig
            loc = tuple(int(v) for v in np.unravel_index(int(i), tuple(x.shape)))
            if not (math.isfinite(fp) and math.isfinite(fm)):
                return GradCheckReport(math.inf, loc, False, len(coords), "non-finite function value")
            numeric = (fp - fm) / (2 * eps)
            analytic = float(g[i])
            err = abs(analytic - numeric)
            rel = 0.0 if err < abs_fallback else err / max(abs(analytic), abs(numeric))
            if rel > worst or worst_idx is None:
                worst, worst_idx = rel, loc
    return GradCheckReport(worst, worst_idx, worst < threshold, len(coords))


def brute_polar(reference, H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """Polar targets by straight double loop; ``reference`` is 1-based ``(x_max, y_max)``."""
    x_max, y_max = int(reference[0]), int(reference[1])
    norm = math.sqrt(W * W + H * H)
    rho = np.zeros((H, W))
    theta = np.zeros((H, W))
    for n in range(1, H + 1):
        for m in range(1, W + 1):
            rho[n - 1, m - 1] = math.sqrt((x_max - m) ** 2 + (y_max - n) ** 2) / norm
            theta[n - 1, m - 1] = (math.atan2(y_max - n, x_max - m) + math.pi) / (2 * math.pi)
    return rho, theta


def brute_losses(rho_hat, theta_hat, rho, theta, mask) -> tuple[float, float]:
    """Masked radial and angle-deviation losses for one image, by scalar loops."""
    rho_hat, theta_hat, rho, theta = (np.asarray(a, dtype=np.float64) for a in (rho_hat, theta_hat, rho, theta))
    mask = np.asarray(mask, dtype=bool)
    H, W = mask.shape
    count = 0
    dis_sum = 0.0
    delta_sum = 0.0
    for i in range(H):
        for j in range(W):
            if mask[i, j]:
                count += 1
                dis_sum += abs(rho_hat[i, j] - rho[i, j])
                delta_sum += abs(theta_hat[i, j] - theta[i, j])
    if count == 0:
        return 0.0, 0.0
    mean_delta = delta_sum / count
    dev_sum = 0.0
    for i in range(H):
        for j in range(W):
            if mask[i, j]:
                dev_sum += abs(abs(theta_hat[i, j] - theta[i, j]) - mean_delta)
    return dis_sum / count, dev_sum / count


def brute_centroid_grid(D: np.ndarray, sigma: float, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Saliency-weighted centroid of source coordinates for every cell of a square map.

    ``D`` is already at grid resolution; out-of-range source cells take the
    value of the nearest border cell and the kernel is cut at ``radius`` cells.
    """
    G = D.shape[0]
    mx = np.zeros((G, G))
    my = np.zeros((G, G))
    for y in range(G):
        for x in range(G):
            num_x = num_y = den = 0.0
            for h in range(y - radius, y + radius + 1):
                for w in range(x - radius, x + radius + 1):
                    d = D[min(max(h, 0), G - 1), min(max(w, 0), G - 1)]
                    k = math.exp(-(((x - w) / (G - 1)) ** 2 + ((y - h) / (G - 1)) ** 2) / (2 * sigma**2))
                    den += d * k
                    num_x += d * k * w / (G - 1)
                    num_y += d * k * h / (G - 1)
            mx[y, x] = num_x / den
            my[y, x] = num_y / den
    return mx, my
