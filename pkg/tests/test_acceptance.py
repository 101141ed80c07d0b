"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` to see the summary lines.
"""

import json
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import torch
from torch import nn

from swis import oracles
from swis.encoder import BackboneConfig, ModelConfig
from swis.engine import LARS, OptimizerConfig, ScheduleConfig, lars_update, lr_at_epoch, make_optimizer, pretrain_images
from swis.evaluate import EvalConfig, FeatureSet, VerificationRecord, compute_metrics, evaluate_features
from swis.objective import normalize_center, normalize_columns, swis_loss, swis_loss_grad
from swis.preprocess import N_PATCHES, otsu_crop, otsu_threshold, overlap_add, patchify
from swis.synthetic import render_signature, separable_features, synthetic_images


@pytest.fixture
def report(capsys):
    def emit(number: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail

    return emit


def test_01_loss_matches_naive_loops(report):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        n, d = int(rng.integers(2, 17)), int(rng.integers(1, 33))
        z, zp = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        got = swis_loss(torch.from_numpy(z), torch.from_numpy(zp))
        want = oracles.loss_loops(z, zp)
        for g, w in zip((got.total, got.on_diag, got.off_diag), want):
            worst = max(worst, abs(float(g) - w) / max(abs(w), 1e-300))
    eye = torch.eye(6, dtype=torch.float64)
    at_identity = float(swis_loss(eye, eye).total)
    elapsed = time.perf_counter() - t0
    report(1, worst < 1e-6 and at_identity == 0.0 and elapsed < 5.0,
           f"max rel err {worst:.2e}, loss at C=I {at_identity}, {elapsed:.2f}s")


def test_02_gradient_matches_finite_differences(report):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n, d = int(rng.integers(2, 7)), int(rng.integers(1, 6))
        z, zp = rng.normal(size=(n, d)), rng.normal(size=(n, d))

        def f(a, b):
            return float(swis_loss(torch.from_numpy(a), torch.from_numpy(b)).total)

        fd = (oracles.central_difference(lambda a: f(a, zp), z, h=1e-4),
              oracles.central_difference(lambda b: f(z, b), zp, h=1e-4))
        zt = torch.from_numpy(z).requires_grad_(True)
        zpt = torch.from_numpy(zp).requires_grad_(True)
        swis_loss(zt, zpt).total.backward()
        closed = swis_loss_grad(torch.from_numpy(z), torch.from_numpy(zp))
        for analytic in ((zt.grad, zpt.grad), closed):
            for a, num in zip(analytic, fd):
                err = np.max(np.abs(a.numpy() - num)) / max(np.max(np.abs(num)), 1e-12)
                worst = max(worst, float(err))
    elapsed = time.perf_counter() - t0
    report(2, worst < 1e-4 and elapsed < 30.0, f"max rel err {worst:.2e} over 20 seeds, {elapsed:.2f}s")


def test_03_normalization_contract(report):
    rng = np.random.default_rng(303)
    worst_norm = worst_mean = 0.0
    for _ in range(20):
        n, d = int(rng.integers(2, 33)), int(rng.integers(1, 65))
        z = rng.normal(size=(n, d)) * rng.uniform(0.01, 100)
        for c in rng.choice(d, size=min(d, 3), replace=False):
            z[:, c] = rng.uniform(-5, 5)
        zt = torch.from_numpy(z)
        norms = normalize_columns(zt).norm(dim=0)
        means = normalize_center(zt).mean(dim=0)
        worst_norm = max(worst_norm, float((norms - 1).abs().max()))
        worst_mean = max(worst_mean, float(means.abs().max()))
    report(3, worst_norm < 1e-9 and worst_mean < 1e-9,
           f"max |norm-1| {worst_norm:.1e}, max |mean| {worst_mean:.1e} (constant columns included)")


def test_04_patch_geometry(report):
    rng = np.random.default_rng(404)
    worst, counts = 0.0, set()
    for _ in range(5):
        view = rng.uniform(-1, 1, (224, 224)).astype(np.float32)
        grid = patchify(view)
        counts.add(len(grid.patches))
        for (r, c) in [(0, 0), (12, 12), (5, 9)]:
            assert np.array_equal(grid.patch(r, c), view[16 * r:16 * r + 32, 16 * c:16 * c + 32])
        worst = max(worst, float(np.max(np.abs(overlap_add(grid) - view))))
    report(4, counts == {N_PATCHES} and N_PATCHES == 169 and worst < 1e-6,
           f"patch counts {sorted(counts)}, reconstruction err {worst:.1e}")


def test_05_otsu_matches_exhaustive_search(report):
    rng = np.random.default_rng(505)
    mismatches = 0
    for i in range(100):
        h, w = int(rng.integers(4, 24)), int(rng.integers(4, 24))
        if i % 2:
            img = rng.integers(0, 256, size=(h, w))
        else:
            # ink-on-paper style: two modes with noise
            img = np.where(rng.random((h, w)) < 0.2, rng.normal(40, 20, (h, w)), rng.normal(220, 15, (h, w)))
        img = np.clip(img, 0, 255).astype(np.uint8)
        img.flat[0], img.flat[1] = 0, 255  # never constant
        if otsu_threshold(img) != oracles.otsu_brute_force(img):
            mismatches += 1
    report(5, mismatches == 0, f"{100 - mismatches}/100 exact matches")


def test_06_schedule(report):
    cfg = ScheduleConfig()
    peak = lr_at_epoch(10, cfg)
    mid = lr_at_epoch(505, cfg)
    jump = abs(lr_at_epoch(10 + 1e-9, cfg) - lr_at_epoch(10 - 1e-9, cfg))
    ok = peak == pytest.approx(0.1, abs=1e-15) and abs(mid - 0.05) <= 1e-9 and jump < 1e-9
    report(6, ok, f"lr(10)={peak}, lr(505)={mid:.12f}, jump at warmup end {jump:.1e}")


def test_07_lars_reduction(report):
    rng = np.random.default_rng(707)
    worst = 0.0
    for _ in range(20):
        shape = tuple(int(s) for s in rng.integers(1, 9, size=rng.integers(1, 3)))
        w0, g0, b0 = (rng.normal(size=shape) for _ in range(3))
        w, g, buf = (torch.from_numpy(a.copy()) for a in (w0, g0, b0))
        ratio = np.linalg.norm(w0) / (np.linalg.norm(g0) + 1e-8)
        lr = float(rng.uniform(0.001, 0.5))
        lars_update(w, g, buf, lr, momentum=0.9, weight_decay=0.0, trust_coefficient=1.0 / ratio)
        want_w, want_buf = oracles.momentum_sgd(w0, g0, b0, lr, 0.9)
        worst = max(worst, float(np.max(np.abs(w.numpy() - want_w))), float(np.max(np.abs(buf.numpy() - want_buf))))

    # excluded parameters inside a real optimizer, with weight decay switched on
    torch.manual_seed(7)
    model = nn.Sequential(nn.Linear(5, 4), nn.BatchNorm1d(4), nn.Linear(4, 2)).double()
    opt = make_optimizer(model, OptimizerConfig(weight_decay=0.1))
    excluded = {id(p) for g in opt.param_groups if g["exclude"] for p in g["params"]}
    shadow = {id(p): (p.detach().numpy().copy(), np.zeros(p.shape)) for p in model.parameters() if id(p) in excluded}
    x = torch.randn(8, 5, dtype=torch.float64)
    excl_err = 0.0
    for step in range(5):
        for group in opt.param_groups:
            group["lr"] = 0.05 * (step + 1)
        opt.zero_grad()
        model(x).pow(2).sum().backward()
        grads = {id(p): p.grad.numpy().copy() for p in model.parameters()}
        opt.step()
        for p in model.parameters():
            if id(p) in shadow:
                w_prev, b_prev = shadow[id(p)]
                shadow[id(p)] = oracles.momentum_sgd(w_prev, grads[id(p)], b_prev, 0.05 * (step + 1), 0.9)
                excl_err = max(excl_err, float(np.max(np.abs(p.detach().numpy() - shadow[id(p)][0]))))
    names = len(excluded)
    report(7, worst < 1e-7 and excl_err < 1e-12 and names == 4,
           f"reduction err {worst:.1e}; {names} excluded tensors track momentum SGD (err {excl_err:.1e})")


def _records(n_writers, far, frr):
    g_rej, f_acc = round(16 * n_writers * frr), round(30 * n_writers * far)
    records = []
    for i in range(16 * n_writers):
        rej = i < g_rej
        records.append(VerificationRecord(f"g{i}", "w", "x" if rej else "w", "genuine",
                                          "reject" if rej else "accept", not rej))
    for i in range(30 * n_writers):
        acc = i < f_acc
        records.append(VerificationRecord(f"f{i}", "w", "w" if acc else "x", "forged",
                                          "accept" if acc else "reject", not acc))
    return records


def test_08_accuracy_identity_bhsig_rates(report):
    bengali = compute_metrics(_records(1000, 0.367, 0.116))
    hindi = compute_metrics(_records(1000, 0.104, 0.598))
    rates_exact = (math.isclose(bengali.far, 0.367) and math.isclose(bengali.frr, 0.116)
                   and math.isclose(hindi.far, 0.104) and math.isclose(hindi.frr, 0.598))
    b_ok = 72.03 <= 100 * bengali.accuracy <= 72.05
    h_ok = 72.42 <= 100 * hindi.accuracy <= 72.44
    report(8, rates_exact and b_ok and h_ok,
           f"Bengali {100 * bengali.accuracy:.4f}% (band 72.03-72.05: {'in' if b_ok else 'out'}), "
           f"Hindi {100 * hindi.accuracy:.4f}% (band 72.42-72.44: {'in' if h_ok else 'out'})")


@pytest.mark.slow
def test_09_smoke_run(report, tmp_path):
    images = [otsu_crop(im) for im in synthetic_images(64, 2)]
    # seeds are the config defaults (data 0, augment 1, init 2)
    result = pretrain_images(images, ModelConfig(BackboneConfig("tiny_cnn")), ScheduleConfig(train_epochs=30),
                             batch_size=8, data_seed=0, augment_seed=1, init_seed=2, run_dir=tmp_path)
    first, last = result.epoch_summary[0], result.epoch_summary[-1]
    loss_ok = last["total"] < 0.5 * first["total"]
    offdiag_ok = last["mean_abs_offdiag"] < first["mean_abs_offdiag"]
    diag_ok = abs(last["mean_diag"] - 1) < abs(first["mean_diag"] - 1)
    time_ok = result.seconds < 600
    report(9, loss_ok and offdiag_ok and diag_ok and time_ok,
           f"loss {first['total']:.3f} -> {last['total']:.3f} ({'ok' if loss_ok else 'not < 50%'}), "
           f"mean|C_ij| {first['mean_abs_offdiag']:.4f} -> {last['mean_abs_offdiag']:.4f}, "
           f"mean C_ii {first['mean_diag']:.4f} -> {last['mean_diag']:.4f} "
           f"({'toward 1' if diag_ok else 'away from 1'}), {result.seconds:.0f}s")


def test_10_downstream_pipeline(report, tmp_path):
    feats, writers, labels, roles = separable_features(n_writers=10, sigma=0.05, seed=10)
    fs = FeatureSet(feats, writers, labels, roles, [f"q{i}" for i in range(len(writers))])
    rep, _ = evaluate_features(fs, tmp_path, EvalConfig())
    files = all((tmp_path / f).is_file() for f in ("metrics.json", "records.csv", "tsne.png"))
    ok = rep.accuracy > 0.99 and rep.far < 0.01 and rep.frr < 0.01 and files
    report(10, ok, f"accuracy {rep.accuracy:.4f}, FAR {rep.far:.4f}, FRR {rep.frr:.4f}, outputs present: {files}")


def _write_custom_dataset(root):
    root.mkdir()
    lines = ["image_path,writer_id,label,split"]
    import cv2

    for w in range(5):
        split = "pretrain" if w < 2 else "test"
        for k in range(8):
            name = f"w{w}_g{k}.png"
            cv2.imwrite(str(root / name), render_signature(w, k))
            lines.append(f"{name},{w},genuine,{split}")
        for k in range(3):
            name = f"w{w}_f{k}.png"
            cv2.imwrite(str(root / name), render_signature(w + 50, k))
            lines.append(f"{name},{w},forged,{split}")
    (root / "manifest.csv").write_text("\n".join(lines) + "\n")


@pytest.mark.slow
def test_11_deterministic_evaluate(report, tmp_path):
    data = tmp_path / "data"
    _write_custom_dataset(data)
    env = dict(os.environ, SWIS_DETERMINISTIC="1")

    def swis(*args):
        proc = subprocess.run([sys.executable, "-m", "swis", *args], env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        return proc

    manifest = tmp_path / "manifest.csv"
    swis("ingest", "--root", str(data), "--dataset-id", "custom", "--n-ref", "4", "--out", str(manifest))
    cfg = tmp_path / "run.txt"
    cfg.write_text(f'dataset.manifest = "{manifest}"\nmodel.backbone = "tiny_cnn"\n'
                   "train.epochs = 1\ntrain.batch_size = 8\neval.tsne_iterations = 250\n")
    swis("pretrain", "--config", str(cfg), "--run-dir", str(tmp_path / "run"))
    ckpt = tmp_path / "run" / "ckpt_1"
    outs = []
    for k in range(2):
        out = tmp_path / f"eval{k}"
        swis("evaluate", "--checkpoint", str(ckpt), "--manifest", str(manifest), "--config", str(cfg),
             "--out", str(out))
        outs.append((out / "metrics.json").read_bytes())
    same = outs[0] == outs[1]
    acc = json.loads(outs[0])["accuracy"]
    report(11, same, f"metrics.json byte-identical across runs: {same} (accuracy {acc:.3f})")
