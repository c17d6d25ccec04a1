"""Figure-style exports: warp grids, amplified images, feedback and pattern-map overlays."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import torch  # noqa: E402
import torch.nn.functional as F  # noqa: E402

from . import gae as gae_ops  # noqa: E402
from .data import read_image  # noqa: E402
from .exceptions import DataError  # noqa: E402
from .model import GAEorNet  # noqa: E402
from .sda import identity_grid  # noqa: E402

log = logging.getLogger(__name__)

PANELS = ("original", "grid", "warped", "feedback", "pattern")


def inspect(model: GAEorNet, image: np.ndarray, cam_feedback: bool = False) -> dict:
    """Run both pathways on one (3, S, S) image and collect the intermediate maps."""
    model.eval()
    x = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32))[None]
    with torch.no_grad():
        feats = model.backbone.encode(x)
        if cam_feedback:
            D = model.cam_feedback(feats, model.backbone.logits(feats))
        else:
            D = model.amplifier.generator(feats)
        warped, grid = model.amplifier.warp(x, D)
        T = model.backbone.encode(warped)
        pm = gae_ops.pattern_map(T)
        ref = gae_ops.locate_reference(pm)
    S = x.shape[-1]
    disp = (grid - identity_grid(1, S, grid.dtype)).abs().amax().item() * (S - 1)
    return {
        "image": image,
        "D": D[0].numpy(),
        "grid": grid[0].numpy(),
        "warped": warped[0].numpy(),
        "pattern": pm.values[0].numpy(),
        "reference": tuple(int(v) for v in ref[0]),
        "max_displacement_px": float(disp),
    }


def _rgb(chw: np.ndarray) -> np.ndarray:
    return np.clip(chw.transpose(1, 2, 0), 0.0, 1.0)


def _upsample(m: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(np.asarray(m, dtype=np.float32))[None, None]
    return F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)[0, 0].numpy()


def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=100, bbox_inches="tight", pad_inches=0.02)
    plt.close(fig)
    return path


def _panel(size_in: float = 3.0):
    fig, ax = plt.subplots(figsize=(size_in, size_in))
    ax.set_axis_off()
    return fig, ax


def export_panels(info: dict, out_dir: Path, stem: str, grid_lines: int = 12) -> list[Path]:
    """Write the five PNG panels for one image; returns their paths."""
    out_dir.mkdir(parents=True, exist_ok=True)
    img = _rgb(info["image"])
    S = img.shape[0]
    paths = []

    fig, ax = _panel()
    ax.imshow(img)
    paths.append(_save(fig, out_dir / f"{stem}_original.png"))

    # deformed grid: every k-th row and column of the sampling grid drawn in source pixels
    gx, gy = info["grid"][0] * (S - 1), info["grid"][1] * (S - 1)
    step = max(1, S // grid_lines)
    fig, ax = _panel()
    ax.imshow(img)
    for i in list(range(0, S, step)) + [S - 1]:
        ax.plot(gx[i, :], gy[i, :], color="yellow", lw=0.7)
        ax.plot(gx[:, i], gy[:, i], color="yellow", lw=0.7)
    ax.set_xlim(-0.5, S - 0.5)
    ax.set_ylim(S - 0.5, -0.5)
    paths.append(_save(fig, out_dir / f"{stem}_grid.png"))

    fig, ax = _panel()
    ax.imshow(_rgb(info["warped"]))
    paths.append(_save(fig, out_dir / f"{stem}_warped.png"))

    fig, ax = _panel()
    ax.imshow(img)
    ax.imshow(_upsample(info["D"], S), cmap="jet", alpha=0.5, vmin=0.0, vmax=1.0)
    paths.append(_save(fig, out_dir / f"{stem}_feedback.png"))

    pattern = info["pattern"]
    H, W = pattern.shape
    fig, ax = _panel()
    ax.imshow(_rgb(info["warped"]))
    ax.imshow(_upsample(pattern, S), cmap="jet", alpha=0.5)
    x_max, y_max = info["reference"]
    ax.plot((x_max - 0.5) * S / W - 0.5, (y_max - 0.5) * S / H - 0.5, marker="x", color="white", ms=12, mew=2.5)
    paths.append(_save(fig, out_dir / f"{stem}_pattern.png"))
    np.save(out_dir / f"{stem}_pattern.npy", pattern)
    return paths


def visualize(
    model: GAEorNet,
    image_paths,
    out_dir,
    cam_feedback: bool = False,
) -> dict:
    """Export panels for every readable image; unreadable ones are skipped and counted."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    size = model.backbone.config.image_size
    summary = {"images": [], "skipped": [], "written": 0}
    for i, p in enumerate(image_paths):
        p = Path(p)
        try:
            image = read_image(p, size)
        except DataError as exc:
            log.warning("skipping %s: %s", p, exc)
            summary["skipped"].append(str(p))
            continue
        info = inspect(model, image, cam_feedback)
        stem = f"{i:03d}_{p.stem}"
        files = export_panels(info, out, stem)
        summary["written"] += len(files)
        summary["images"].append(
            {
                "source": str(p),
                "stem": stem,
                "files": [f.name for f in files],
                "reference": list(info["reference"]),
                "max_displacement_px": info["max_displacement_px"],
            }
        )
    summary["skipped_count"] = len(summary["skipped"])
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary
