"""``gaeor`` command line: generate, train, eval, visualize, ablate.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, echo_config, load_config
from .data import generate_synthetic, load_image_folder, save_benchmark
from .exceptions import ConfigurationError, DataError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

LOCK_NAME = ".gaeor.lock"

log = logging.getLogger("gaeor")


@contextmanager
def out_dir_lock(out_dir: Path):
    """Claim ``out_dir`` for this process; a second concurrent claim fails."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise DataError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "deterministic", False):
        cfg.trainer.deterministic = True
    return cfg


def cmd_generate(args) -> int:
    cfg = _config(args)
    d = cfg.data
    out = Path(args.out_dir)
    with out_dir_lock(out):
        bench = generate_synthetic(d.num_classes, d.per_class_train, d.per_class_test, d.image_size, d.seed, d.max_rotation_deg)
        path = save_benchmark(bench, out)
        echo_config(cfg, out)
    print(f"wrote {len(bench.train)} train / {len(bench.test)} test images, manifest {path}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .trainer import train

    cfg = _config(args)
    bench = load_image_folder(args.data_dir, cfg.data.image_size)
    out = Path(args.out_dir)
    with out_dir_lock(out):
        echo_config(cfg, out)
        res = train(cfg.train_config(), bench, out, resume=args.resume)
    last = res.history[-1] if res.history else None
    if last is not None:
        print(f"epoch {last.epoch} loss {last.total:.4f} train_acc {last.train_acc:.4f} test_acc {last.test_acc}")
    print(f"checkpoint {res.checkpoint}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .trainer import evaluate, load_checkpoint, model_from_checkpoint

    doc = load_checkpoint(args.checkpoint)
    model, config = model_from_checkpoint(doc)
    bench = load_image_folder(args.data_dir, config.backbone.image_size)
    manifest = bench.test if args.split == "test" else bench.train
    acc = evaluate(model, manifest)
    print(f"top1 {acc:.6f}")
    return EXIT_OK


def cmd_visualize(args) -> int:
    from .trainer import load_checkpoint, model_from_checkpoint
    from .viz import visualize

    doc = load_checkpoint(args.checkpoint)
    model, config = model_from_checkpoint(doc)
    out = Path(args.out_dir)
    with out_dir_lock(out):
        summary = visualize(model, args.images, out, cam_feedback=config.components.cam_feedback)
    print(f"wrote {summary['written']} PNGs for {len(summary['images'])} image(s); skipped {summary['skipped_count']}")
    if not summary["images"]:
        return EXIT_DATA
    return EXIT_OK


def cmd_ablate(args) -> int:
    from .trainer import rows_by_name, run_ablation_suite, summarize, sweep_rows, write_table

    cfg = _config(args)
    bench = load_image_folder(args.data_dir, cfg.data.image_size)
    ab = cfg.ablation
    if ab.subset_classes is not None:
        bench = bench.subset(ab.subset_classes)
    rows = sweep_rows(ab.sweep.alphas, ab.sweep.betas, ab.sweep.gammas) if ab.sweep else rows_by_name(ab.rows)
    out = Path(args.out_dir)
    with out_dir_lock(out):
        echo_config(cfg, out)
        base = replace(cfg.train_config(), deterministic=cfg.trainer.deterministic)
        results = run_ablation_suite(rows, bench, base, seeds=ab.seeds, on_result=lambda r: print(
            f"{r['row']:>24s} seed {r['seed']} acc {r['test_acc']:.4f} {r['status']}", flush=True))
        path = write_table(results, out / "ablation.tsv")
        (out / "summary.json").write_text(json.dumps(summarize(results), indent=2))
    print(f"table {path}")
    return EXIT_NUMERIC if any(r["status"] != "ok" for r in results) else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gaeor", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic benchmark to disk")
    g.add_argument("config")
    g.add_argument("out_dir")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train on an image-folder dataset")
    t.add_argument("config")
    t.add_argument("data_dir")
    t.add_argument("out_dir")
    t.add_argument("--deterministic", action="store_true")
    t.add_argument("--resume", default=None, help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="top-1 accuracy of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("data_dir")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.set_defaults(func=cmd_eval)

    v = sub.add_parser("visualize", help="export warp / feedback / pattern-map panels")
    v.add_argument("checkpoint")
    v.add_argument("images", nargs="+")
    v.add_argument("--out-dir", required=True)
    v.set_defaults(func=cmd_visualize)

    a = sub.add_parser("ablate", help="run the ablation grid or the loss-weight sweep")
    a.add_argument("config")
    a.add_argument("data_dir")
    a.add_argument("out_dir")
    a.add_argument("--deterministic", action="store_true")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if exc.dump:
            print(json.dumps(exc.dump, indent=2), file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
