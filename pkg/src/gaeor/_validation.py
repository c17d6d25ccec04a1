"""Input checks shared by the estimator API."""

from __future__ import annotations

import numpy as np

from .exceptions import ConfigurationError


def check_images(X, image_size: int | None = None, channels: int = 3) -> np.ndarray:
    """Coerce an image batch to float32 (N, C, H, W) in [0, 1].

    Accepts channels-last input and uint8 pixels (scaled by 1/255).
    """
    X = np.asarray(X)
    if X.ndim != 4:
        raise ValueError(f"expected a 4-d image batch, got shape {X.shape}")
    if X.shape[1] != channels and X.shape[-1] == channels:
        X = X.transpose(0, 3, 1, 2)
    if X.shape[1] != channels:
        raise ValueError(f"expected {channels} channels, got shape {X.shape}")
    if X.shape[2] != X.shape[3]:
        raise ValueError(f"images must be square, got {X.shape[2]}x{X.shape[3]}")
    if image_size is not None and X.shape[2] != image_size:
        raise ValueError(f"images must be {image_size}px, got {X.shape[2]}px")
    if X.dtype == np.uint8:
        X = X.astype(np.float32) / 255.0
    else:
        X = X.astype(np.float32, copy=False)
    if not np.isfinite(X).all():
        raise ValueError("images contain NaN or infinity")
    if X.size and (X.min() < 0.0 or X.max() > 1.0):
        raise ValueError("pixel values must lie in [0, 1]")
    return np.ascontiguousarray(X)


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1:
        raise ValueError(f"y must be 1-d, got shape {y.shape}")
    if len(y) != n_samples:
        raise ValueError(f"X has {n_samples} samples but y has {len(y)}")
    return y


def check_min_classes(classes: np.ndarray) -> None:
    if len(classes) < 2:
        raise ConfigurationError(f"need at least 2 classes, got {len(classes)}")
