"""Training loop, evaluation, checkpoints and the ablation harness."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch
from torch.utils._python_dispatch import TorchDispatchMode

from .backbone import BackboneConfig
from .data import AugmentConfig, Benchmark, DatasetManifest, LabeledSample, augment
from .exceptions import ConfigurationError, DataError, NumericError
from .model import Components, GAEorNet, LossBreakdown, LossWeights, forward_step
from .sda import DEFAULT_GRID_SIDE, DEFAULT_SIGMA

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "gaeor-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
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
    gat_warmup_epochs: int = 0
    generator_lr_scale: float = 0.03
    weights: LossWeights = field(default_factory=LossWeights)
    components: Components = field(default_factory=Components)
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    sigma: float = DEFAULT_SIGMA
    grid_side: int = DEFAULT_GRID_SIDE
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigurationError(f"lr must be > 0, got {self.lr}")
        if not self.generator_lr_scale > 0:
            raise ConfigurationError(f"generator_lr_scale must be > 0, got {self.generator_lr_scale}")
        if self.decay_interval_epochs < 1:
            raise ConfigurationError("decay_interval_epochs must be >= 1")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigurationError(f"loss_reduction must be 'mean' or 'sum', got {self.loss_reduction!r}")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 0-based ``epoch``: step decay every ``decay_interval_epochs``."""
        return self.lr * self.lr_decay ** (epoch // self.decay_interval_epochs)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        nested = {
            "weights": LossWeights,
            "components": Components,
            "backbone": BackboneConfig,
            "augment": AugmentConfig,
        }
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                sub = dict(d[key])
                if typ is AugmentConfig and "erase_area" in sub:
                    sub["erase_area"] = tuple(sub["erase_area"])
                d[key] = typ(**sub)
        return cls(**d)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    l_cls: float
    l_reg: float
    l_dis: float
    l_ang: float
    l_gae: float
    l_gat: float
    aux_cls: float
    total: float
    train_acc: float
    test_acc: float | None


@dataclass
class TrainResult:
    model: GAEorNet
    history: list[EpochRecord]
    config: TrainConfig
    class_names: list[str]
    checkpoint: Path | None = None
    optimizer: torch.optim.Optimizer | None = None

    @property
    def final_test_acc(self) -> float | None:
        return self.history[-1].test_acc if self.history else None


# --------------------------------------------------------------------------- #
# determinism
# --------------------------------------------------------------------------- #


@contextmanager
def deterministic_mode(enabled: bool = True):
    prev = torch.are_deterministic_algorithms_enabled()
    try:
        if enabled:
            torch.use_deterministic_algorithms(True)
        yield
    finally:
        torch.use_deterministic_algorithms(prev)


def build_model(config: TrainConfig, num_classes: int) -> GAEorNet:
    torch.manual_seed(config.seed)
    return GAEorNet(num_classes, config.backbone, config.sigma, config.grid_side)


def make_optimizer(model: GAEorNet, config: TrainConfig) -> torch.optim.SGD:
    """SGD over all parameters; the feedback generator's group runs at a scaled rate."""
    gen = list(model.amplifier.generator.parameters())
    gen_ids = {id(p) for p in gen}
    rest = [p for p in model.parameters() if id(p) not in gen_ids]
    groups = [
        {"params": rest, "lr_scale": 1.0},
        {"params": gen, "lr_scale": config.generator_lr_scale},
    ]
    for g in groups:
        g["lr"] = config.lr * g["lr_scale"]
    return torch.optim.SGD(groups, lr=config.lr, momentum=config.momentum, weight_decay=config.weight_decay)


# --------------------------------------------------------------------------- #
# checkpoints
# --------------------------------------------------------------------------- #


def save_checkpoint(path, model: GAEorNet, optimizer, config: TrainConfig, epoch: int, class_names, history=()):
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "num_classes": model.num_classes,
        "class_names": list(class_names),
        "weights": {k: v.detach().to(torch.float32).contiguous() for k, v in model.state_dict().items()
                    if v.is_floating_point()},
        "buffers": {k: v.detach().clone() for k, v in model.state_dict().items() if not v.is_floating_point()},
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "epoch": int(epoch),
        "history": [asdict(r) for r in history],
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(doc, tmp)
        tmp.replace(path)
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def load_checkpoint(path) -> dict:
    try:
        doc = torch.load(Path(path), map_location="cpu", weights_only=True)
    except Exception as exc:  # torch surfaces corrupt files as assorted unpickling errors
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {doc.get('version')}")
    return doc


def model_from_checkpoint(doc: dict) -> tuple[GAEorNet, TrainConfig]:
    config = TrainConfig.from_dict(doc["config"])
    model = GAEorNet(doc["num_classes"], config.backbone, config.sigma, config.grid_side)
    state = {**doc["weights"], **doc["buffers"]}
    model.load_state_dict(state)
    model.eval()
    return model, config


# --------------------------------------------------------------------------- #
# evaluation
# --------------------------------------------------------------------------- #


def _to_tensor(X: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(X, dtype=np.float32))


def predict_logits(model: GAEorNet, X: np.ndarray, batch_size: int = 64) -> torch.Tensor:
    """Classification branch only: ``encode`` then ``classify`` per batch."""
    was_training = model.training
    model.eval()
    out = []
    with torch.no_grad():
        for i in range(0, len(X), batch_size):
            xb = _to_tensor(X[i : i + batch_size])
            out.append(model.backbone.logits(model.backbone.encode(xb)))
    model.train(was_training)
    if not out:
        return torch.zeros(0, model.num_classes)
    return torch.cat(out)


def evaluate(model_or_checkpoint, manifest: DatasetManifest, batch_size: int = 64) -> float:
    """Top-1 accuracy of the classification branch on ``manifest``.

    Argmax ties go to the lowest class index.
    """
    if isinstance(model_or_checkpoint, GAEorNet):
        model = model_or_checkpoint
    else:
        doc = model_or_checkpoint if isinstance(model_or_checkpoint, dict) else load_checkpoint(model_or_checkpoint)
        model, _ = model_from_checkpoint(doc)
    if manifest.classes != model.num_classes:
        raise ConfigurationError(f"model has {model.num_classes} classes, dataset has {manifest.classes}")
    X, y = manifest.arrays()
    if len(y) == 0:
        raise DataError(f"{manifest.split} split is empty")
    pred = predict_logits(model, X, batch_size).argmax(dim=1).numpy()
    return float((pred == y).mean())


class OpCounter(TorchDispatchMode):
    """Counts every dispatched aten operator while active."""

    def __init__(self):
        super().__init__()
        self.counts = Counter()

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        self.counts[str(func.overloadpacket)] += 1
        return func(*args, **(kwargs or {}))

    @property
    def total(self) -> int:
        return sum(self.counts.values())


@contextmanager
def module_call_counter(model: GAEorNet):
    """Yield a Counter of forward calls to the amplifier generator and polar head."""
    calls = Counter()
    hooks = [
        model.amplifier.generator.register_forward_hook(lambda *a: calls.update(["feedback_generator"])),
        model.head.register_forward_hook(lambda *a: calls.update(["polar_head"])),
    ]
    try:
        yield calls
    finally:
        for h in hooks:
            h.remove()


def count_eval_ops(model: GAEorNet, manifest: DatasetManifest, batch_size: int = 64) -> tuple[Counter, Counter]:
    """Aten op counts and auxiliary-module calls of one ``evaluate`` pass."""
    with module_call_counter(model) as calls, OpCounter() as ops:
        evaluate(model, manifest, batch_size)
    return ops.counts, calls


# --------------------------------------------------------------------------- #
# training
# --------------------------------------------------------------------------- #


def _epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, 7919, epoch]).permutation(n)


def _augmented_batch(samples: Sequence[LabeledSample], idx, cfg: TrainConfig, epoch: int):
    imgs, labels = [], []
    for i in idx:
        rng = np.random.default_rng([cfg.seed, 104729, epoch, int(i)])
        s = augment(samples[int(i)], cfg.augment, rng)
        imgs.append(s.image)
        labels.append(s.label)
    return _to_tensor(np.stack(imgs)), torch.as_tensor(labels, dtype=torch.long)


def train(
    config: TrainConfig,
    bench: Benchmark | DatasetManifest,
    out_dir: str | Path | None = None,
    resume: str | Path | None = None,
    on_epoch: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Train on the train split; evaluate on the test split after every epoch.

    With ``out_dir`` set, writes ``metrics.jsonl`` (one record per epoch) and
    ``checkpoint.pt``. ``resume`` continues from a checkpoint, keeping its
    epoch counter.
    """
    if isinstance(bench, Benchmark):
        train_m, test_m, names = bench.train, bench.test, bench.class_names
    else:
        train_m, test_m, names = bench, None, bench.class_names
    if len(train_m) == 0:
        raise DataError("training split is empty")
    num_classes = train_m.classes
    names = list(names) or [str(k) for k in range(num_classes)]

    with deterministic_mode(config.deterministic):
        model = build_model(config, num_classes)
        optimizer = make_optimizer(model, config)
        start_epoch = 0
        history: list[EpochRecord] = []
        if resume is not None:
            doc = load_checkpoint(resume)
            if doc["num_classes"] != num_classes:
                raise ConfigurationError(f"checkpoint has {doc['num_classes']} classes, dataset has {num_classes}")
            model.load_state_dict({**doc["weights"], **doc["buffers"]})
            if doc["optimizer"] is not None:
                optimizer.load_state_dict(doc["optimizer"])
            start_epoch = doc["epoch"]
            history = [EpochRecord(**r) for r in doc.get("history", [])]

        metrics_file = None
        if out_dir is not None:
            out = Path(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            metrics_file = out / "metrics.jsonl"
            mode = "a" if resume is not None else "w"
            with open(metrics_file, mode):
                pass

        samples = train_m.samples
        n = len(samples)
        for epoch in range(start_epoch, config.epochs):
            lr = config.lr_at(epoch)
            for g in optimizer.param_groups:
                g["lr"] = lr * g.get("lr_scale", 1.0)
            gamma_scale = 1.0
            if config.gat_warmup_epochs > 0:
                gamma_scale = min(1.0, (epoch + 1) / config.gat_warmup_epochs)

            model.train()
            sums = LossBreakdown()
            correct = 0
            batches = 0
            order = _epoch_order(n, config.seed, epoch)
            for start in range(0, n, config.batch_size):
                idx = order[start : start + config.batch_size]
                if len(idx) < 2 and n > 1 and config.backbone.batch_norm:
                    continue  # a single-sample batch has no batch-norm statistics
                xb, yb = _augmented_batch(samples, idx, config, epoch)
                out = forward_step(
                    model, xb, yb, config.weights, config.components, config.loss_reduction, gamma_scale
                )
                optimizer.zero_grad(set_to_none=True)
                out.total.backward()
                optimizer.step()
                for k, v in out.losses.as_dict().items():
                    setattr(sums, k, getattr(sums, k) + v)
                correct += int((out.logits.detach().argmax(1) == yb).sum())
                batches += 1

            means = {k: v / max(batches, 1) for k, v in sums.as_dict().items()}
            test_acc = evaluate(model, test_m, config.eval_batch_size) if test_m is not None and len(test_m) else None
            rec = EpochRecord(
                epoch=epoch + 1,
                lr=lr,
                train_acc=correct / n,
                test_acc=test_acc,
                **means,
            )
            history.append(rec)
            if metrics_file is not None:
                with open(metrics_file, "a") as fh:
                    fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")
            if on_epoch is not None:
                on_epoch(rec)
            log.info(
                "epoch %d lr %.2e loss %.4f train %.3f test %s",
                rec.epoch, lr, rec.total, rec.train_acc, "-" if test_acc is None else f"{test_acc:.3f}",
            )

        ckpt = None
        if out_dir is not None:
            ckpt = save_checkpoint(Path(out_dir) / "checkpoint.pt", model, optimizer, config, config.epochs, names, history)
    return TrainResult(model, history, config, names, ckpt, optimizer)


# --------------------------------------------------------------------------- #
# ablation harness
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class AblationRow:
    name: str
    components: Components
    weights: LossWeights | None = None


def default_ablation_rows() -> list[AblationRow]:
    full = Components()
    return [
        AblationRow("baseline", Components.baseline()),
        AblationRow("+SDA", Components(sda=True, gae=False, gat=False, aux_warped_ce=True)),
        AblationRow("+GAE", Components(sda=False, gae=True, gat=False, aux_warped_ce=False)),
        AblationRow("+GAE+GAT", Components(sda=False, gae=True, gat=True, aux_warped_ce=False)),
        AblationRow("full", full),
        AblationRow("cam_feedback", full.replace(cam_feedback=True)),
        AblationRow("unmasked", full.replace(masked=False)),
        AblationRow("raw_angle", full.replace(sd_mode=False)),
        AblationRow("cartesian", full.replace(cartesian_mode=True)),
    ]


def rows_by_name(names: Iterable[str]) -> list[AblationRow]:
    table = {r.name: r for r in default_ablation_rows()}
    unknown = [n for n in names if n not in table]
    if unknown:
        raise ConfigurationError(f"unknown ablation row(s): {', '.join(unknown)}")
    return [table[n] for n in names]


def sweep_rows(
    alphas: Sequence[float] = (0.1, 0.3, 0.5),
    betas: Sequence[float] = (0.25, 0.5, 1.0),
    gammas: Sequence[float] = (0.25, 0.5, 1.0),
) -> list[AblationRow]:
    return [
        AblationRow(f"a={a:g},b={b:g},g={g:g}", Components(), LossWeights(alpha=a, beta=b, gamma=g))
        for a in alphas
        for b in betas
        for g in gammas
    ]


def run_ablation_suite(
    rows: Sequence[AblationRow],
    bench: Benchmark,
    base: TrainConfig,
    seeds: Sequence[int] = (0,),
    on_result: Callable[[dict], None] | None = None,
) -> list[dict]:
    """Train every (row, seed) pair; one result dict per pair, in emission order.

    A row whose training diverges is reported with ``status="diverged"``
    instead of aborting the suite.
    """
    results = []
    for row in rows:
        for seed in seeds:
            cfg = replace(base, components=row.components, seed=seed, weights=row.weights or base.weights)
            t0 = time.perf_counter()
            status, acc, final = "ok", float("nan"), {}
            try:
                res = train(cfg, bench)
                acc = res.final_test_acc if res.final_test_acc is not None else float("nan")
                final = asdict(res.history[-1])
            except NumericError as exc:
                status = "diverged"
                final = exc.dump
            result = {
                "row": row.name,
                "seed": seed,
                "status": status,
                "test_acc": acc,
                "final_total_loss": final.get("total", float("nan")),
                "fingerprint": cfg.fingerprint(),
                "flags": asdict(cfg.components),
                "alpha": cfg.weights.alpha,
                "beta": cfg.weights.beta,
                "gamma": cfg.weights.gamma,
                "seconds": round(time.perf_counter() - t0, 2),
            }
            results.append(result)
            if on_result is not None:
                on_result(result)
    return results


def summarize(results: Sequence[dict]) -> dict[str, dict]:
    """Mean and standard deviation of test accuracy per row."""
    by_row: dict[str, list[float]] = {}
    for r in results:
        by_row.setdefault(r["row"], []).append(r["test_acc"])
    return {
        name: {"mean": float(np.mean(v)), "std": float(np.std(v)), "n": len(v)} for name, v in by_row.items()
    }


def write_table(results: Sequence[dict], path, delimiter: str = "\t") -> Path:
    cols = ["row", "seed", "status", "test_acc", "final_total_loss", "alpha", "beta", "gamma", "fingerprint", "flags", "seconds"]
    path = Path(path)
    lines = [delimiter.join(cols)]
    for r in results:
        cells = []
        for c in cols:
            v = r[c]
            if c == "flags":
                v = ",".join(f"{k}={int(b)}" for k, b in v.items())
            elif isinstance(v, float):
                v = "nan" if math.isnan(v) else f"{v:.6g}"
            cells.append(str(v))
        lines.append(delimiter.join(cells))
    path.write_text("\n".join(lines) + "\n")
    return path
