"""Self-supervised pretraining: LR schedule, LARS and the training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from torch import nn

from .dataset import Manifest, load_grayscale, pretrain_samples
from .encoder import ModelConfig, PatchEncoder, save_checkpoint
from .errors import Divergence
from .objective import diagnostics, interleave, normalize_center, nt_xent_loss, swis_loss
from .preprocess import AugmentConfig, make_view_pair, otsu_crop
from .rng import Lcg64, derive_seed

log = logging.getLogger(__name__)

LOG_HEADER = ("step", "on_diag", "off_diag", "total", "mean_abs_offdiag", "mean_diag")

_NORM_TYPES = (nn.modules.batchnorm._NormBase, nn.LayerNorm, nn.GroupNorm)


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float = 0.1
    warmup_epochs: float = 10
    horizon_epochs: float = 1000
    train_epochs: int = 500
    steps_per_epoch: int = 1

    def __post_init__(self):
        if not self.warmup_epochs < self.horizon_epochs:
            raise ValueError("warmup_epochs must be smaller than horizon_epochs")
        if self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be positive")


# Epoch counts used for each corpus family.
ICDAR_EPOCHS = 500
BHSIG_EPOCHS = 200


def epochs_for(dataset_id: str) -> int:
    return BHSIG_EPOCHS if dataset_id.startswith("bhsig") else ICDAR_EPOCHS


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Linear warmup to ``base_lr`` then cosine decay to zero at the horizon.

    Evaluated per step on the fractional epoch ``step / steps_per_epoch``.
    """
    if step < 0:
        raise ValueError("step must be non-negative")
    e = step / cfg.steps_per_epoch
    return lr_at_epoch(e, cfg)


def lr_at_epoch(e: float, cfg: ScheduleConfig) -> float:
    if e <= cfg.warmup_epochs:
        return cfg.base_lr * e / cfg.warmup_epochs
    if e >= cfg.horizon_epochs:
        return 0.0
    progress = (e - cfg.warmup_epochs) / (cfg.horizon_epochs - cfg.warmup_epochs)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass(frozen=True)
class OptimizerConfig:
    momentum: float = 0.9
    weight_decay: float = 1e-6
    trust_coefficient: float = 1e-3
    eps: float = 1e-8


def lars_update(w: torch.Tensor, g: torch.Tensor, buf: torch.Tensor, lr: float, *,
                momentum: float, weight_decay: float, trust_coefficient: float,
                eps: float = 1e-8, excluded: bool = False) -> None:
    """One in-place LARS update of ``w`` and its momentum buffer ``buf``.

    Adapted parameters::

        ratio = ||w|| / (||g|| + wd ||w|| + eps)
        buf   = momentum * buf + lr * trust_coefficient * ratio * (g + wd w)
        w     = w - buf

    Excluded parameters (biases, normalization layers) skip both the ratio and
    weight decay: ``buf = momentum * buf + lr * g``. When either norm is zero
    the scaled rate falls back to ``lr``.
    """
    if excluded:
        step = g
        local_lr = lr
    else:
        w_norm = torch.linalg.vector_norm(w)
        g_norm = torch.linalg.vector_norm(g)
        if w_norm > 0 and g_norm > 0:
            local_lr = lr * trust_coefficient * float(w_norm / (g_norm + weight_decay * w_norm + eps))
        else:
            local_lr = lr
        step = g + weight_decay * w if weight_decay else g
    buf.mul_(momentum).add_(step, alpha=local_lr)
    w.sub_(buf)


class LARS(torch.optim.Optimizer):
    """LARS with per-group exclusion from trust-ratio scaling and weight decay.

    The learning rate given to :meth:`step` (or stored in each group) is the
    global rate; the schedule is applied by the caller.
    """

    def __init__(self, params, lr: float = 0.1, momentum: float = 0.9, weight_decay: float = 1e-6,
                 trust_coefficient: float = 1e-3, eps: float = 1e-8):
        defaults = dict(lr=lr, momentum=momentum, weight_decay=weight_decay,
                        trust_coefficient=trust_coefficient, eps=eps, exclude=False)
        super().__init__(params, defaults)
        self.steps = 0

    @torch.no_grad()
    def step(self, closure=None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            for p in group["params"]:
                if p.grad is None:
                    continue
                if not torch.isfinite(p.grad).all():
                    raise Divergence(self.steps)
                state = self.state[p]
                if "momentum_buffer" not in state:
                    state["momentum_buffer"] = torch.zeros_like(p)
                lars_update(
                    p, p.grad, state["momentum_buffer"], group["lr"],
                    momentum=group["momentum"],
                    weight_decay=0.0 if group["exclude"] else group["weight_decay"],
                    trust_coefficient=group["trust_coefficient"],
                    eps=group["eps"], excluded=group["exclude"],
                )
        self.steps += 1
        return loss


def excluded_parameter_names(model: nn.Module) -> set[str]:
    """Names of all biases and all normalization-layer parameters."""
    names = set()
    for mod_name, module in model.named_modules():
        for p_name, _ in module.named_parameters(recurse=False):
            full = f"{mod_name}.{p_name}" if mod_name else p_name
            if isinstance(module, _NORM_TYPES) or p_name == "bias":
                names.add(full)
    return names


def param_groups(model: nn.Module, cfg: OptimizerConfig) -> list[dict]:
    excluded = excluded_parameter_names(model)
    adapted, plain = [], []
    for name, p in model.named_parameters():
        if p.requires_grad:
            (plain if name in excluded else adapted).append(p)
    return [
        {"params": adapted, "exclude": False, "weight_decay": cfg.weight_decay},
        {"params": plain, "exclude": True, "weight_decay": 0.0},
    ]


def make_optimizer(model: nn.Module, cfg: OptimizerConfig, lr: float = 0.0) -> LARS:
    return LARS(param_groups(model, cfg), lr=lr, momentum=cfg.momentum,
                weight_decay=cfg.weight_decay, trust_coefficient=cfg.trust_coefficient, eps=cfg.eps)


def epoch_batches(n: int, batch_size: int, seed: int, epoch: int) -> list[list[int]]:
    """Shuffled index batches for one epoch; batches with fewer than 2 items are dropped."""
    order = list(range(n))
    Lcg64(derive_seed(seed, epoch)).shuffle(order)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    return [b for b in batches if len(b) >= 2]


@dataclass
class TrainResult:
    checkpoint: Path | None
    model: PatchEncoder | None = None
    history: list[dict] = field(default_factory=list)
    epoch_summary: list[dict] = field(default_factory=list)
    seconds: float = 0.0


def _epoch_mean(rows: list[dict], epoch: int) -> dict:
    keys = LOG_HEADER[1:]
    out = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    out["epoch"] = epoch
    return out


def pretrain_images(
    images: Sequence[np.ndarray],
    model_cfg: ModelConfig = ModelConfig(),
    schedule: ScheduleConfig | None = None,
    optim: OptimizerConfig = OptimizerConfig(),
    *,
    batch_size: int = 32,
    epochs: int | None = None,
    objective: str = "swis",
    temperature: float = 0.5,
    normalization: str = "batch",
    augment_cfg: AugmentConfig = AugmentConfig(),
    data_seed: int = 0,
    augment_seed: int = 0,
    init_seed: int = 0,
    run_dir: str | Path | None = None,
    checkpoint_every: int = 50,
) -> TrainResult:
    """Pretrain a :class:`PatchEncoder` on already cropped 8-bit images.

    Each step draws two augmentations per image, encodes both views, and
    minimizes the decorrelation loss (or NT-Xent) with LARS.
    """
    if objective not in ("swis", "nt_xent"):
        raise ValueError(f"unknown objective {objective!r}")
    if len(images) < 2:
        raise ValueError("pretraining needs at least 2 images")
    steps_per_epoch = len(epoch_batches(len(images), batch_size, data_seed, 0))
    if schedule is None:
        schedule = ScheduleConfig(steps_per_epoch=steps_per_epoch)
    elif schedule.steps_per_epoch != steps_per_epoch:
        schedule = ScheduleConfig(schedule.base_lr, schedule.warmup_epochs, schedule.horizon_epochs,
                                  schedule.train_epochs, steps_per_epoch)
    epochs = schedule.train_epochs if epochs is None else epochs

    torch.manual_seed(init_seed)
    model = PatchEncoder(model_cfg)
    model.train()
    opt = make_optimizer(model, optim)

    run_dir = Path(run_dir) if run_dir is not None else None
    log_fh = writer = None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        log_path = run_dir / "train_log.csv"
        fresh = not log_path.exists()
        log_fh = open(log_path, "a", newline="", encoding="utf-8")
        writer = csv.writer(log_fh, lineterminator="\n")
        if fresh:
            writer.writerow(LOG_HEADER)

    result = TrainResult(checkpoint=None)
    t0 = time.perf_counter()
    step = 0
    try:
        for epoch in range(1, epochs + 1):
            rows = []
            for batch in epoch_batches(len(images), batch_size, data_seed, epoch):
                v1, v2 = [], []
                for idx in batch:
                    a, b = make_view_pair(images[idx], derive_seed(augment_seed, epoch, idx), augment_cfg)
                    v1.append(a.pixels)
                    v2.append(b.pixels)
                x1 = torch.from_numpy(np.stack(v1)).unsqueeze(1)
                x2 = torch.from_numpy(np.stack(v2)).unsqueeze(1)

                for group in opt.param_groups:
                    group["lr"] = lr_at(step, schedule)
                _, p1 = model(x1)
                _, p2 = model(x2)
                z1 = normalize_center(p1, mode=normalization)
                z2 = normalize_center(p2, mode=normalization)
                parts = swis_loss(z1, z2)
                loss = parts.total if objective == "swis" else nt_xent_loss(interleave(p1, p2), temperature)
                if not torch.isfinite(loss):
                    raise Divergence(step, "non-finite loss")
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.steps = step
                opt.step()

                row = {"step": step, "on_diag": float(parts.on_diag.detach()), "off_diag": float(parts.off_diag.detach()),
                       "total": float(loss.detach())}
                row.update(diagnostics(z1.detach(), z2.detach()))
                rows.append(row)
                if writer is not None:
                    writer.writerow([row[k] for k in LOG_HEADER])
                step += 1
            result.history.extend(rows)
            summary = _epoch_mean(rows, epoch)
            result.epoch_summary.append(summary)
            log.info("epoch %d loss %.4f offdiag %.4f diag %.4f", epoch, summary["total"],
                     summary["mean_abs_offdiag"], summary["mean_diag"])
            if run_dir is not None and (epoch % checkpoint_every == 0 or epoch == epochs):
                if log_fh is not None:
                    log_fh.flush()
                result.checkpoint = save_checkpoint(run_dir / f"ckpt_{epoch}", model, epoch)
    finally:
        if log_fh is not None:
            log_fh.close()
    result.seconds = time.perf_counter() - t0
    result.model = model
    return result


def load_pretrain_images(samples: Iterable) -> list[np.ndarray]:
    """Decode and Otsu-crop every pretraining sample once."""
    return [otsu_crop(load_grayscale(s)) for s in samples]


def pretrain(manifest: Manifest, model_cfg: ModelConfig = ModelConfig(),
             schedule: ScheduleConfig | None = None, batch_size: int = 32, seed: int = 0,
             include_forged: bool = True, **kwargs) -> TrainResult:
    """Pretrain on the manifest's pretrain split. Seeds for data order,
    augmentation and initialization are derived from ``seed`` unless given."""
    samples = pretrain_samples(manifest, include_forged)
    if not samples:
        raise ValueError("manifest has an empty pretrain split")
    images = load_pretrain_images(samples)
    if schedule is None:
        schedule = ScheduleConfig(train_epochs=epochs_for(manifest.dataset_id))
    kwargs.setdefault("data_seed", derive_seed(seed, 10))
    kwargs.setdefault("augment_seed", derive_seed(seed, 11))
    kwargs.setdefault("init_seed", derive_seed(seed, 12) % (1 << 63))
    return pretrain_images(images, model_cfg, schedule, batch_size=batch_size, **kwargs)
