"""Acceptance gate. Each test prints one ``CRITERION n PASS|FAIL`` line.

Criteria 7 and 8 train on the reference synthetic benchmark and take tens
of minutes on a single CPU core.
"""

import json
import math
import time

import numpy as np
import pytest
import torch
import yaml

from gaeor.backbone import Backbone, BackboneConfig, classification_loss
from gaeor.cli import EXIT_OK, main
from gaeor.data import generate_synthetic
from gaeor.gae import PolarPrediction, angle_loss, distance_loss, gae_loss, polar_targets
from gaeor.gat import transfer_loss
from gaeor.sda import FeedbackGenerator, build_grid, generate_feedback, identity_grid, resample
from gaeor.trainer import OpCounter, TrainConfig, build_model, count_eval_ops, rows_by_name, run_ablation_suite, summarize
from gaeor.verify import brute_losses, brute_polar, grad_check

REFERENCE = dict(num_classes=80, per_class_train=3, per_class_test=3, image_size=64, seed=7)
EPOCHS = 60
SEEDS = (0, 1, 2, 3, 4)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def reference_bench():
    return generate_synthetic(**REFERENCE)


# --------------------------------------------------------------------------- #
# 1. gradient suite
# --------------------------------------------------------------------------- #


def _gradient_suite():
    g = np.random.default_rng(2024)
    t = lambda *shape: torch.from_numpy(g.random(shape))  # noqa: E731
    checks = {}

    img = t(2, 3, 12, 12)
    grid = (identity_grid(2, 12, torch.float64) * 0.9 + 0.05 + torch.from_numpy(g.normal(0, 0.02, (2, 2, 12, 12))))
    w = t(2, 3, 12, 12)
    checks["resample/image"] = grad_check(lambda x: (resample(x, grid) * w).sum(), img)
    checks["resample/grid"] = grad_check(lambda gr: (resample(img, gr) * w).sum(), grid)

    D = t(2, 4, 4) * 0.8 + 0.1
    wg = t(2, 2, 16, 16)
    checks["build_grid/D"] = grad_check(lambda d: (build_grid(d, 16, 0.25, 11) * wg).sum(), D)

    gen = FeedbackGenerator(6).double()
    with torch.no_grad():
        gen.proj.weight.copy_(torch.from_numpy(g.normal(0, 0.5, (1, 6, 1, 1))))
    feats = torch.from_numpy(g.normal(0, 1, (2, 6, 4, 4)))
    wd = t(2, 4, 4)
    checks["generate_feedback/features"] = grad_check(lambda f: (generate_feedback(f, gen) * wd).sum(), feats)

    def feedback_of_weight(wt):
        return (torch.sigmoid(torch.einsum("c,bchw->bhw", wt, feats) + gen.proj.bias) * wd).sum()

    checks["generate_feedback/weight"] = grad_check(feedback_of_weight, gen.proj.weight.detach().reshape(-1))

    targets = polar_targets([[2, 3], [4, 1]], 5, 5)
    mask = torch.from_numpy(g.random((2, 5, 5)) > 0.4)
    mask[0, 2, 1] = mask[1, 0, 3] = False
    rho_hat, theta_hat = t(2, 5, 5), t(2, 5, 5)
    checks["L_dis"] = grad_check(lambda r: distance_loss(PolarPrediction(r, theta_hat), targets, mask), rho_hat)
    checks["L_ang"] = grad_check(lambda a: angle_loss(PolarPrediction(rho_hat, a), targets, mask), theta_hat)

    T, Fm = torch.from_numpy(g.normal(0, 1, (3, 8, 4, 4))), torch.from_numpy(g.normal(0, 1, (3, 8, 4, 4)))
    checks["L_GAT/F"] = grad_check(lambda f: transfer_loss(T, f), Fm)
    checks["L_GAT/T(bidirectional)"] = grad_check(lambda x: transfer_loss(x, Fm, bidirectional=True), T)

    logits = torch.from_numpy(g.normal(0, 1, (4, 5)))
    one_hot = torch.eye(5, dtype=torch.float64)[[0, 3, 1, 4]]
    checks["L_CLS/logits"] = grad_check(lambda z: classification_loss(torch.softmax(z, 1), one_hot), logits)

    bb = Backbone(BackboneConfig(stage_channels=(4, 4, 4, 8), image_size=32), 5).double().eval()
    x = t(2, 3, 32, 32)
    y1h = torch.eye(5, dtype=torch.float64)[[1, 2]]
    checks["L_CLS/fc.weight"] = grad_check(
        lambda wt: classification_loss(torch.softmax(bb.encode(x).mean((2, 3)) @ wt.T + bb.fc.bias, 1), y1h),
        bb.fc.weight.detach(),
    )
    return checks


def test_criterion_1_gradient_suite(report):
    t0 = time.perf_counter()
    checks = _gradient_suite()
    elapsed = time.perf_counter() - t0
    worst = max(c.max_rel_error for c in checks.values())
    ok = all(c.passed for c in checks.values()) and elapsed < 300
    failing = [k for k, c in checks.items() if not c.passed]
    report(1, ok, f"{len(checks)} checks, worst rel err {worst:.2e}, {elapsed:.1f}s, failing={failing}")
    assert ok


# --------------------------------------------------------------------------- #
# 2. identity warp
# --------------------------------------------------------------------------- #


def test_criterion_2_identity_warp(report):
    worst_grid = 0.0
    for value in (0.05, 0.5, 0.97):
        for side in (16, 31):
            D = torch.full((2, 8, 8), value, dtype=torch.float64)
            grid = build_grid(D, 48, 0.25, side)
            ident = identity_grid(2, 48, torch.float64)
            worst_grid = max(worst_grid, (grid - ident)[..., 4:-4, 4:-4].abs().max().item())
    img = torch.from_numpy(np.random.default_rng(1).random((2, 3, 48, 48)))
    exact = all(
        torch.equal(resample(img.to(dt), identity_grid(2, 48, dt)), img.to(dt)) for dt in (torch.float32, torch.float64)
    )
    ok = worst_grid < 1e-6 and exact
    report(2, ok, f"max |grid - identity| {worst_grid:.2e}, identity resample bit-exact={exact}")
    assert ok


# --------------------------------------------------------------------------- #
# 3. polar oracle
# --------------------------------------------------------------------------- #


def test_criterion_3_polar_oracle(report):
    g = np.random.default_rng(3)
    worst = 0.0
    for _ in range(50):
        H, W = int(g.integers(1, 13)), int(g.integers(1, 13))
        ref = (int(g.integers(1, W + 1)), int(g.integers(1, H + 1)))
        field = polar_targets(ref, H, W)
        rho, theta = brute_polar(ref, H, W)
        worst = max(worst, np.abs(field.rho[0].numpy() - rho).max(), np.abs(field.theta[0].numpy() - theta).max())
    corner = polar_targets((1, 1), 4, 4).rho[0, 3, 3].item()
    ok = worst < 1e-12 and abs(corner - 0.75) < 1e-12
    report(3, ok, f"50 cases max diff {worst:.1e}, W=H=4 corner rho {corner:.15f}")
    assert ok


# --------------------------------------------------------------------------- #
# 4. rotation-offset nullity
# --------------------------------------------------------------------------- #


def test_criterion_4_angle_offset_nullity(report):
    g = np.random.default_rng(4)
    worst = 0.0
    for c in (0.01, 0.05, 0.1):
        for _ in range(10):
            H, W = 6, 7
            refs = [[int(g.integers(1, W + 1)), int(g.integers(1, H + 1))] for _ in range(3)]
            targets = polar_targets(refs, H, W)
            mask = torch.from_numpy(g.random((3, H, W)) > 0.3)
            pred = PolarPrediction(targets.rho.clone(), targets.theta + c)
            worst = max(worst, abs(angle_loss(pred, targets, mask).item()))
    ok = worst < 1e-10
    report(4, ok, f"max L_ang under constant offsets {worst:.1e}")
    assert ok


# --------------------------------------------------------------------------- #
# 5. loss-equivalence oracle
# --------------------------------------------------------------------------- #


def test_criterion_5_loss_oracle(report):
    g = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        H, W = int(g.integers(2, 9)), int(g.integers(2, 9))
        ref = [int(g.integers(1, W + 1)), int(g.integers(1, H + 1))]
        targets = polar_targets(ref, H, W)
        mask = torch.from_numpy(g.random((1, H, W)) > g.random())
        mask[0, ref[1] - 1, ref[0] - 1] = False
        rho_hat, theta_hat = torch.from_numpy(g.random((1, H, W))), torch.from_numpy(g.random((1, H, W)))
        l_dis, l_ang, _ = gae_loss(PolarPrediction(rho_hat, theta_hat), targets, mask)
        b_dis, b_ang = brute_losses(rho_hat[0], theta_hat[0], targets.rho[0], targets.theta[0], mask[0])
        worst = max(worst, abs(l_dis.item() - b_dis), abs(l_ang.item() - b_ang))
    ok = worst < 1e-10
    report(5, ok, f"100 masked fields, max diff {worst:.1e}")
    assert ok


# --------------------------------------------------------------------------- #
# 6. evaluation overhead
# --------------------------------------------------------------------------- #


def test_criterion_6_eval_op_count(report, reference_bench):
    manifest = reference_bench.subset(10).test
    full = build_model(TrainConfig(), 10)
    ops, calls = count_eval_ops(full, manifest)

    # baseline route: a bare classifier with no amplifier or head attached
    plain = Backbone(full.backbone.config, 10)
    plain.load_state_dict(full.backbone.state_dict())
    plain.eval()
    X, _ = manifest.arrays()
    with OpCounter() as ref, torch.no_grad():
        out = [plain(torch.from_numpy(X[i : i + 64])) for i in range(0, len(X), 64)]
        torch.cat(out).argmax(dim=1).numpy()
    ok = ops == ref.counts and sum(calls.values()) == 0
    report(6, ok, f"evaluate ops {sum(ops.values())} vs baseline {sum(ref.counts.values())}, aux module calls {dict(calls)}")
    assert ok


# --------------------------------------------------------------------------- #
# 7. scaled comparative run
# --------------------------------------------------------------------------- #


def test_criterion_7_comparative_run(report, reference_bench):
    rows = rows_by_name(["baseline", "full", "+SDA", "+GAE+GAT"])
    base = TrainConfig(epochs=EPOCHS)
    t0 = time.perf_counter()
    results = run_ablation_suite(rows, reference_bench, base, seeds=SEEDS)
    hours = (time.perf_counter() - t0) / 3600
    s = summarize(results)
    acc = {k: 100 * v["mean"] for k, v in s.items()}
    b = acc["baseline"]
    ok = (
        acc["full"] >= b + 3.0
        and acc["+SDA"] >= b - 1.0
        and acc["+GAE+GAT"] >= b - 1.0
        and all(r["status"] == "ok" for r in results)
        and hours <= 4.0
    )
    table = ", ".join(f"{k} {v:.2f}" for k, v in acc.items())
    report(7, ok, f"mean top-1 % over {len(SEEDS)} seeds: {table}; full-baseline {acc['full'] - b:+.2f}; {hours:.2f} h")
    assert ok


# --------------------------------------------------------------------------- #
# 8. hyperparameter sweep
# --------------------------------------------------------------------------- #


def _reference_config(tmp_path, **sections):
    doc = {"data": dict(REFERENCE), "trainer": {"epochs": EPOCHS}}
    doc.update(sections)
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump(doc))
    return str(p)


@pytest.fixture(scope="module")
def reference_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("reference")
    cfg = _reference_config(root)
    assert main(["generate", cfg, str(root / "data")]) == EXIT_OK
    return root / "data"


def test_criterion_8_weight_sweep(report, tmp_path, reference_dir):
    cfg = _reference_config(tmp_path, ablation={"subset_classes": 10, "sweep": {}})
    out = tmp_path / "sweep"
    code = main(["ablate", cfg, str(reference_dir), str(out)])
    lines = (out / "ablation.tsv").read_text().splitlines()
    header, rows = lines[0].split("\t"), [dict(zip(lines[0].split("\t"), r.split("\t"))) for r in lines[1:]]
    combos = {(float(r["alpha"]), float(r["beta"]), float(r["gamma"])) for r in rows}
    finite = all(r["status"] == "ok" and math.isfinite(float(r["final_total_loss"])) for r in rows)
    ok = code == EXIT_OK and len(rows) == 27 and len(combos) == 27 and finite
    accs = [float(r["test_acc"]) for r in rows]
    report(8, ok, f"{len(rows)} configs, all finite={finite}, acc range [{min(accs):.3f}, {max(accs):.3f}]")
    assert "alpha" in header
    assert ok


# --------------------------------------------------------------------------- #
# 9. determinism
# --------------------------------------------------------------------------- #


def test_criterion_9_deterministic_cli(report, tmp_path, reference_dir):
    cfg = _reference_config(tmp_path, trainer={"epochs": 3})
    files = []
    for name in ("a", "b"):
        assert main(["train", cfg, str(reference_dir), str(tmp_path / name), "--deterministic"]) == EXIT_OK
        files.append((tmp_path / name / "metrics.jsonl").read_bytes())
    ok = files[0] == files[1] and len(files[0]) > 0
    n = len(files[0].splitlines())
    last = json.loads(files[0].splitlines()[-1])
    report(9, ok, f"{n} epochs, metrics files byte-identical={files[0] == files[1]}, final loss {last['total']:.6f}")
    assert ok
