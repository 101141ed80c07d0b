"""Quick invariant suite run by ``swis selfcheck``."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np
import torch

from . import oracles
from .engine import ScheduleConfig, lars_update, lr_at_epoch
from .evaluate import VerificationRecord, compute_metrics
from .objective import normalize_center, normalize_columns, swis_loss, swis_loss_grad
from .preprocess import N_PATCHES, otsu_threshold, overlap_add, patchify


def check_loss() -> str:
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(10):
        n, d = rng.integers(2, 9), rng.integers(1, 9)
        z, zp = rng.normal(size=(n, d)), rng.normal(size=(n, d))
        got = float(swis_loss(torch.from_numpy(z), torch.from_numpy(zp)).total)
        want = oracles.loss_loops(z, zp)[0]
        worst = max(worst, abs(got - want) / max(1.0, abs(want)))
    assert worst < 1e-6, f"relative error {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_gradient() -> str:
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        z, zp = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        gz, gzp = swis_loss_grad(torch.from_numpy(z), torch.from_numpy(zp))

        def f(a, b):
            return float(swis_loss(torch.from_numpy(a), torch.from_numpy(b)).total)

        fd_z = oracles.central_difference(lambda a: f(a, zp), z)
        fd_zp = oracles.central_difference(lambda b: f(z, b), zp)
        for an, fd in ((gz.numpy(), fd_z), (gzp.numpy(), fd_zp)):
            worst = max(worst, float(np.max(np.abs(an - fd)) / max(1.0, np.max(np.abs(fd)))))
    assert worst < 1e-4, f"relative error {worst:.2e}"
    return f"max rel err {worst:.1e}"


def check_normalization() -> str:
    rng = np.random.default_rng(1)
    z = torch.from_numpy(rng.normal(size=(7, 5)))
    z[:, 2] = 3.0
    zbar = normalize_columns(z)
    assert torch.allclose(zbar.norm(dim=0), torch.ones(5, dtype=z.dtype), atol=1e-9)
    out = normalize_center(z)
    assert out.mean(dim=0).abs().max() < 1e-9
    return "unit norms, zero means"


def check_otsu() -> str:
    rng = np.random.default_rng(2)
    for _ in range(10):
        img = rng.integers(0, 256, size=(16, 16), dtype=np.uint8)
        assert otsu_threshold(img) == oracles.otsu_brute_force(img)
    return "10/10 images match"


def check_patches() -> str:
    view = np.random.default_rng(3).uniform(-1, 1, (224, 224)).astype(np.float32)
    grid = patchify(view)
    assert len(grid.patches) == N_PATCHES
    err = float(np.max(np.abs(overlap_add(grid) - view)))
    assert err < 1e-6, f"reconstruction error {err:.2e}"
    return f"{N_PATCHES} patches, err {err:.1e}"


def check_schedule() -> str:
    cfg = ScheduleConfig()
    assert lr_at_epoch(10, cfg) == 0.1
    assert abs(lr_at_epoch(505, cfg) - 0.05) < 1e-9
    assert abs(lr_at_epoch(10 + 1e-9, cfg) - 0.1) < 1e-9
    return "peak 0.1, midpoint 0.05"


def check_lars() -> str:
    rng = np.random.default_rng(4)
    w = torch.from_numpy(rng.normal(size=(6, 4)))
    g = torch.from_numpy(rng.normal(size=(6, 4)))
    buf = torch.from_numpy(rng.normal(size=(6, 4)))
    ratio = float(w.norm() / (g.norm() + 1e-8))
    want_w, want_buf = oracles.momentum_sgd(w.numpy(), g.numpy(), buf.numpy(), 0.1, 0.9)
    lars_update(w, g, buf, 0.1, momentum=0.9, weight_decay=0.0, trust_coefficient=1.0 / ratio)
    assert np.allclose(w.numpy(), want_w, atol=1e-7)
    assert np.allclose(buf.numpy(), want_buf, atol=1e-7)
    return "reduces to momentum SGD"


def check_metrics() -> str:
    records = []
    n_writers = 50
    for w in range(n_writers):
        for k in range(16):
            acc = (w * 16 + k) % 7 != 0
            records.append(VerificationRecord(f"g{w}_{k}", str(w), str(w) if acc else "x", "genuine",
                                              "accept" if acc else "reject", acc))
        for k in range(30):
            acc = (w * 30 + k) % 3 == 0
            records.append(VerificationRecord(f"f{w}_{k}", str(w), str(w) if acc else "x", "forged",
                                              "accept" if acc else "reject", not acc))
    rep = compute_metrics(records)
    want = oracles.accuracy_from_rates(rep.n_genuine, rep.n_forged, rep.far, rep.frr)
    assert math.isclose(rep.accuracy, want, abs_tol=1e-12)
    return f"accuracy identity holds ({rep.accuracy:.4f})"


CHECKS: dict[str, Callable[[], str]] = {
    "loss_vs_loops": check_loss,
    "gradient_vs_finite_diff": check_gradient,
    "normalize_center": check_normalization,
    "otsu_vs_brute_force": check_otsu,
    "patch_geometry": check_patches,
    "lr_schedule": check_schedule,
    "lars_reduction": check_lars,
    "metric_identity": check_metrics,
}


def run(echo: Callable[[str], None] = print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        try:
            detail = fn()
            echo(f"PASS {name}: {detail}")
        except Exception as exc:  # report every failure, keep going
            ok = False
            echo(f"FAIL {name}: {exc!r}")
    return ok
