"""Synthetic ultra-fine-grained benchmark, image-folder ingestion and augmentation.

Synthetic classes differ only in the layout of thin vein-like strokes that
connect a handful of class-specific anchor points. Every image is drawn over
the same pool of noise textures and re-centred to the same per-channel mean,
so pixel statistics carry (almost) no class information and a classifier has
to pick up the geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .exceptions import ConfigurationError, DataError

_IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}

#: Split codes used when deriving per-sample random streams.
_SPLIT_CODES = {"train": 0, "test": 1}


@dataclass(frozen=True)
class LabeledSample:
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    label: int
    num_classes: int
    source: str = ""

    @property
    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.num_classes, dtype=np.float32)
        v[self.label] = 1.0
        return v


@dataclass(frozen=True)
class SyntheticClassSpec:
    """Geometry of one synthetic class.

    ``anchor_points`` are normalised (x, y) positions in [0, 1]^2 and
    ``edges`` lists the anchor pairs joined by a stroke; ``bends`` holds the
    signed control-point offset of each stroke's quadratic curve.
    """

    class_id: int
    anchor_points: tuple[tuple[float, float], ...]
    edges: tuple[tuple[int, int], ...]
    bends: tuple[float, ...]
    texture_seed: int
    jitter_scale: float

    def min_anchor_distance(self) -> float:
        pts = np.asarray(self.anchor_points)
        return float(min(np.linalg.norm(pts[i] - pts[j]) for i, j in combinations(range(len(pts)), 2)))

    def distance_signature(self, decimals: int = 3) -> tuple[float, ...]:
        pts = np.asarray(self.anchor_points)
        d = [np.linalg.norm(pts[i] - pts[j]) for i, j in combinations(range(len(pts)), 2)]
        return tuple(np.round(sorted(d), decimals).tolist())

    def to_dict(self) -> dict:
        return {
            "class_id": self.class_id,
            "anchor_points": [list(p) for p in self.anchor_points],
            "edges": [list(e) for e in self.edges],
            "bends": list(self.bends),
            "texture_seed": self.texture_seed,
            "jitter_scale": self.jitter_scale,
        }


@dataclass
class DatasetManifest:
    split: str
    samples: list[LabeledSample]
    classes: int
    per_class_train: int
    class_names: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Stack into ``(X, y)`` with X of shape (N, C, H, W)."""
        if not self.samples:
            return np.zeros((0, 3, 0, 0), dtype=np.float32), np.zeros(0, dtype=np.int64)
        X = np.stack([s.image for s in self.samples]).astype(np.float32)
        y = np.asarray([s.label for s in self.samples], dtype=np.int64)
        return X, y


@dataclass
class Benchmark:
    """A train/test pair of manifests sharing one label space."""

    train: DatasetManifest
    test: DatasetManifest
    class_names: list[str]
    seed: int | None = None
    class_specs: list[SyntheticClassSpec] = field(default_factory=list)
    image_size: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, num_classes: int) -> "Benchmark":
        """First ``num_classes`` classes of both splits."""
        if not 2 <= num_classes <= self.num_classes:
            raise ConfigurationError(f"subset size must be in [2, {self.num_classes}], got {num_classes}")

        def cut(m: DatasetManifest) -> DatasetManifest:
            kept = [
                LabeledSample(s.image, s.label, num_classes, s.source) for s in m.samples if s.label < num_classes
            ]
            return DatasetManifest(m.split, kept, num_classes, m.per_class_train, self.class_names[:num_classes])

        return Benchmark(
            cut(self.train),
            cut(self.test),
            self.class_names[:num_classes],
            self.seed,
            self.class_specs[:num_classes],
            self.image_size,
        )


# --------------------------------------------------------------------------- #
# synthetic generation
# --------------------------------------------------------------------------- #

_NUM_ANCHORS = 6
_EXTRA_EDGES = 2
_MIN_ANCHOR_DIST = 0.14
_TEXTURE_POOL = 8
_LEAF_RGB = np.array([0.38, 0.56, 0.27])
_BACKGROUND_RGB = np.array([0.30, 0.33, 0.28])
_VEIN_DELTA = np.array([0.30, 0.26, 0.22])
_CHANNEL_TARGET = np.array([0.36, 0.47, 0.29])


def _make_class_spec(class_id: int, rng: np.random.Generator) -> SyntheticClassSpec:
    while True:
        pts = rng.uniform(0.22, 0.78, size=(_NUM_ANCHORS, 2))
        dmin = min(np.linalg.norm(pts[i] - pts[j]) for i, j in combinations(range(_NUM_ANCHORS), 2))
        if dmin >= _MIN_ANCHOR_DIST:
            break
    # random spanning tree plus a few chords, constant edge count across classes
    order = rng.permutation(_NUM_ANCHORS)
    edges = set()
    for k in range(1, _NUM_ANCHORS):
        a = int(order[k])
        b = int(order[rng.integers(0, k)])
        edges.add((min(a, b), max(a, b)))
    candidates = [e for e in combinations(range(_NUM_ANCHORS), 2) if e not in edges]
    for idx in rng.choice(len(candidates), size=_EXTRA_EDGES, replace=False):
        edges.add(candidates[int(idx)])
    edges = tuple(sorted(edges))
    bends = tuple(float(b) for b in rng.uniform(-0.25, 0.25, size=len(edges)))
    return SyntheticClassSpec(
        class_id=class_id,
        anchor_points=tuple((float(x), float(y)) for x, y in pts),
        edges=edges,
        bends=bends,
        texture_seed=int(rng.integers(0, 2**31 - 1)),
        jitter_scale=float(dmin / 8.0),
    )


def _smooth_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    """Sum of bilinearly upsampled random octaves, scaled to [0, 1]."""
    out = np.zeros((size, size))
    for cells, weight in ((4, 0.5), (8, 0.3), (size // 4, 0.2)):
        coarse = rng.random((cells + 1, cells + 1))
        img = Image.fromarray(coarse.astype(np.float32), mode="F").resize((size, size), Image.BILINEAR)
        out += weight * np.asarray(img, dtype=np.float64)
    out -= out.min()
    return out / max(out.max(), 1e-12)


def _texture_pool(seed: int, size: int) -> list[np.ndarray]:
    rng = np.random.default_rng([seed, 991])
    return [_smooth_noise(rng, 2 * size) for _ in range(_TEXTURE_POOL)]


def _segment_distance(px: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from each point in ``px`` (P, 2) to the nearest segment ``a -> b`` (S, 2)."""
    x, y = px[:, :1], px[:, 1:]
    ax, ay = a[:, 0][None], a[:, 1][None]
    dx, dy = (b[:, 0] - a[:, 0])[None], (b[:, 1] - a[:, 1])[None]
    denom = np.maximum(dx * dx + dy * dy, 1e-12)
    t = np.clip(((x - ax) * dx + (y - ay) * dy) / denom, 0.0, 1.0)
    ex = x - ax - t * dx
    ey = y - ay - t * dy
    return np.sqrt((ex * ex + ey * ey).min(axis=1))


def _rotate(points: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    centred = points - 0.5
    return np.stack([c * centred[:, 0] - s * centred[:, 1], s * centred[:, 0] + c * centred[:, 1]], -1) + 0.5


def render_instance(
    spec: SyntheticClassSpec,
    image_size: int,
    rng: np.random.Generator,
    textures: Sequence[np.ndarray],
    max_rotation_deg: float = 15.0,
) -> np.ndarray:
    """Draw one jittered, rotated instance of ``spec``; returns (3, S, S) in [0, 1]."""
    S = image_size
    angle = math.radians(rng.uniform(-max_rotation_deg, max_rotation_deg))
    pts = np.asarray(spec.anchor_points)
    jitter = np.clip(rng.normal(0.0, spec.jitter_scale, pts.shape), -2 * spec.jitter_scale, 2 * spec.jitter_scale)
    pts = _rotate(pts + jitter, angle)

    # stroke geometry: each edge is a quadratic curve bent perpendicular to the chord
    seg_a, seg_b = [], []
    t = np.linspace(0.0, 1.0, 9)[:, None]
    for (i, j), bend in zip(spec.edges, spec.bends):
        p0, p2 = pts[i], pts[j]
        chord = p2 - p0
        normal = np.array([-chord[1], chord[0]])
        p1 = (p0 + p2) / 2 + bend * normal
        curve = (1 - t) ** 2 * p0 + 2 * (1 - t) * t * p1 + t**2 * p2
        seg_a.append(curve[:-1])
        seg_b.append(curve[1:])
    seg_a = np.concatenate(seg_a) * (S - 1)
    seg_b = np.concatenate(seg_b) * (S - 1)

    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    grid = np.stack([xx.ravel(), yy.ravel()], -1)
    dist = _segment_distance(grid, seg_a, seg_b).reshape(S, S)
    half_width = max(S / 64.0, 0.6)
    vein = np.clip(half_width + 0.5 - dist, 0.0, 1.0)
    node_dist = np.sqrt(((grid[:, None, :] - pts[None] * (S - 1)) ** 2).sum(-1).min(axis=1)).reshape(S, S)
    node = np.clip(S / 28.0 + 0.5 - node_dist, 0.0, 1.0)
    ink = np.maximum(vein, node)

    # shared leaf silhouette, rotated with the instance
    c, s = math.cos(angle), math.sin(angle)
    u = (xx / (S - 1) - 0.5) * c + (yy / (S - 1) - 0.5) * s
    v = -(xx / (S - 1) - 0.5) * s + (yy / (S - 1) - 0.5) * c
    leaf_field = (u / 0.46) ** 2 + (v / 0.40) ** 2
    leaf = np.clip((1.0 - leaf_field) * S / 6.0, 0.0, 1.0)

    tex = textures[int(rng.integers(0, len(textures)))]
    oy, ox = rng.integers(0, tex.shape[0] - S + 1, size=2)
    noise = tex[oy : oy + S, ox : ox + S]

    base = leaf[None] * _LEAF_RGB[:, None, None] + (1 - leaf[None]) * _BACKGROUND_RGB[:, None, None]
    base = base * (0.75 + 0.5 * noise[None])
    img = base + (leaf * ink)[None] * _VEIN_DELTA[:, None, None]
    # pin channel means to one constant so mean colour carries no class signal
    img = img - img.mean(axis=(1, 2), keepdims=True) + _CHANNEL_TARGET[:, None, None]
    img = np.clip(img, 0.0, 1.0)
    return (np.round(img * 255.0) / 255.0).astype(np.float32)


def _check_separable(specs: Sequence[SyntheticClassSpec]) -> None:
    seen = {}
    for spec in specs:
        sig = (spec.distance_signature(), spec.edges)
        if sig in seen:
            raise DataError(f"classes {seen[sig]} and {spec.class_id} share an anchor-distance signature")
        seen[sig] = spec.class_id


def make_class_specs(num_classes: int, seed: int) -> list[SyntheticClassSpec]:
    specs = []
    signatures = set()
    attempt = 0
    while len(specs) < num_classes:
        rng = np.random.default_rng([seed, 17, len(specs), attempt])
        spec = _make_class_spec(len(specs), rng)
        sig = (spec.distance_signature(), spec.edges)
        if sig in signatures:
            attempt += 1
            continue
        signatures.add(sig)
        specs.append(spec)
    _check_separable(specs)
    return specs


def generate_synthetic(
    num_classes: int,
    per_class_train: int,
    per_class_test: int,
    image_size: int,
    seed: int,
    max_rotation_deg: float = 15.0,
) -> Benchmark:
    """Procedurally generate a train/test benchmark.

    Every sample draws from its own random stream keyed by
    ``(seed, class, split, index)`` so the result does not depend on the
    order in which samples are rendered.
    """
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    if per_class_train < 1:
        raise ConfigurationError(f"per_class_train must be >= 1, got {per_class_train}")
    if per_class_test < 0:
        raise ConfigurationError(f"per_class_test must be >= 0, got {per_class_test}")
    if image_size < 32:
        raise ConfigurationError(f"image_size must be >= 32, got {image_size}")

    specs = make_class_specs(num_classes, seed)
    textures = _texture_pool(seed, image_size)
    names = [f"class_{k:03d}" for k in range(num_classes)]

    def split(name: str, per_class: int) -> DatasetManifest:
        samples = []
        for spec in specs:
            for idx in range(per_class):
                rng = np.random.default_rng([seed, spec.class_id, _SPLIT_CODES[name], idx])
                img = render_instance(spec, image_size, rng, textures, max_rotation_deg)
                samples.append(LabeledSample(img, spec.class_id, num_classes, f"{name}/{names[spec.class_id]}/{idx:04d}.png"))
        return DatasetManifest(name, samples, num_classes, per_class_train, names)

    return Benchmark(
        split("train", per_class_train),
        split("test", per_class_test),
        names,
        seed=seed,
        class_specs=specs,
        image_size=image_size,
    )


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0).transpose(1, 2, 0) * 255.0).astype(np.uint8)


def save_benchmark(bench: Benchmark, out_dir: str | Path) -> Path:
    """Write ``train/<class>/<id>.png``, ``test/<class>/<id>.png`` and ``manifest.json``."""
    out = Path(out_dir)
    membership = {}
    try:
        for manifest in (bench.train, bench.test):
            files = []
            for k, name in enumerate(bench.class_names):
                (out / manifest.split / name).mkdir(parents=True, exist_ok=True)
            for sample in manifest.samples:
                rel = sample.source
                Image.fromarray(_to_uint8(sample.image)).save(out / rel)
                files.append({"file": rel, "label": sample.label})
            membership[manifest.split] = files
        doc = {
            "format": "gaeor-synthetic",
            "version": 1,
            "seed": bench.seed,
            "image_size": bench.image_size,
            "classes": bench.class_names,
            "per_class_train": bench.train.per_class_train,
            "class_specs": [s.to_dict() for s in bench.class_specs],
            "splits": membership,
        }
        path = out / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    except OSError as exc:
        raise DataError(f"cannot write dataset to {out}: {exc}") from exc
    return path


# --------------------------------------------------------------------------- #
# image-folder ingestion
# --------------------------------------------------------------------------- #


def read_image(path: Path, image_size: int) -> np.ndarray:
    """Decode one file to float32 (3, S, S) in [0, 1]; undecodable files raise DataError naming the path."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if im.size != (image_size, image_size):
                im = im.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def load_image_folder(root_path: str | Path, image_size: int) -> Benchmark:
    """Read ``root/{train,test}/<class>/*`` into a benchmark.

    Class indices follow lexicographic order of the class directory names
    found under ``train/``.
    """
    if image_size < 32:
        raise ConfigurationError(f"image_size must be >= 32, got {image_size}")
    root = Path(root_path)
    for split in ("train", "test"):
        if not (root / split).is_dir():
            raise DataError(f"missing split directory {root / split}")
    names = sorted(p.name for p in (root / "train").iterdir() if p.is_dir())
    if not names:
        raise DataError(f"no class directories under {root / 'train'}")
    index = {n: k for k, n in enumerate(names)}

    manifests = {}
    for split in ("train", "test"):
        samples = []
        for d in sorted(p for p in (root / split).iterdir() if p.is_dir()):
            if d.name not in index:
                raise DataError(f"class {d.name!r} in {split}/ is absent from train/")
            for f in sorted(d.iterdir()):
                if f.is_file() and f.suffix.lower() in _IMAGE_SUFFIXES:
                    rel = f"{split}/{d.name}/{f.name}"
                    samples.append(LabeledSample(read_image(f, image_size), index[d.name], len(names), rel))
        manifests[split] = samples
    if not manifests["train"]:
        raise DataError(f"no training images under {root / 'train'}")

    counts = np.bincount([s.label for s in manifests["train"]], minlength=len(names))
    per_class = int(counts.min())
    if per_class < 1:
        raise DataError(f"class {names[int(counts.argmin())]!r} has no training images")

    seed = None
    manifest_file = root / "manifest.json"
    if manifest_file.is_file():
        try:
            seed = json.loads(manifest_file.read_text()).get("seed")
        except (OSError, json.JSONDecodeError):
            seed = None
    return Benchmark(
        DatasetManifest("train", manifests["train"], len(names), per_class, names),
        DatasetManifest("test", manifests["test"], len(names), per_class, names),
        names,
        seed=seed,
        image_size=image_size,
    )


# --------------------------------------------------------------------------- #
# augmentation
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class AugmentConfig:
    crop: bool = False
    crop_scale: float = 7 / 8
    erase: bool = False
    erase_prob: float = 0.5
    erase_area: tuple[float, float] = (0.02, 0.12)
    flip: bool = False
    flip_prob: float = 0.5
    color_jitter: bool = False
    jitter_strength: float = 0.1

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls()

    @classmethod
    def default_train(cls) -> "AugmentConfig":
        return cls(crop=True, erase=True, flip=True, color_jitter=True)


def _resize(image: np.ndarray, size: int) -> np.ndarray:
    chans = [
        np.asarray(Image.fromarray(c.astype(np.float32), mode="F").resize((size, size), Image.BILINEAR))
        for c in image
    ]
    return np.stack(chans).astype(np.float32)


def center_crop(image: np.ndarray, scale: float = 7 / 8) -> np.ndarray:
    """Central crop at ``scale`` resized back to the input size."""
    _, H, W = image.shape
    ch = max(1, int(round(H * scale)))
    cw = max(1, int(round(W * scale)))
    top, left = (H - ch) // 2, (W - cw) // 2
    return np.clip(_resize(image[:, top : top + ch, left : left + cw], H), 0.0, 1.0)


def augment(sample: LabeledSample, config: AugmentConfig, rng: np.random.Generator) -> LabeledSample:
    img = sample.image
    _, H, W = img.shape
    if config.crop:
        ch = max(1, int(round(H * config.crop_scale)))
        cw = max(1, int(round(W * config.crop_scale)))
        top = int(rng.integers(0, H - ch + 1))
        left = int(rng.integers(0, W - cw + 1))
        img = _resize(img[:, top : top + ch, left : left + cw], H)
        img = np.clip(img, 0.0, 1.0)
    if config.flip and rng.random() < config.flip_prob:
        img = img[:, :, ::-1]
    if config.color_jitter:
        s = config.jitter_strength
        brightness = 1.0 + rng.uniform(-s, s)
        contrast = 1.0 + rng.uniform(-s, s)
        mean = img.mean()
        img = np.clip((img * brightness - mean) * contrast + mean, 0.0, 1.0)
    if config.erase and rng.random() < config.erase_prob:
        area = rng.uniform(*config.erase_area) * H * W
        aspect = math.exp(rng.uniform(math.log(0.5), math.log(2.0)))
        eh = min(H, max(1, int(round(math.sqrt(area * aspect)))))
        ew = min(W, max(1, int(round(math.sqrt(area / aspect)))))
        top = int(rng.integers(0, H - eh + 1))
        left = int(rng.integers(0, W - ew + 1))
        img = np.array(img, copy=True)
        img[:, top : top + eh, left : left + ew] = rng.random((img.shape[0], 1, 1))
    if img is sample.image:
        return sample
    return LabeledSample(np.ascontiguousarray(img, dtype=np.float32), sample.label, sample.num_classes, sample.source)
