"""Patch-grid encoder: per-patch backbone, grid average pooling and projector."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import torch
from torch import nn
import torchvision

from .errors import IncompatibleCheckpoint, ShapeViolation
from .preprocess import N_PATCHES, PATCH_SIZE, patchify_batch

FEATURE_DIM = 512
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class BackboneConfig:
    name: str = "tiny_cnn"  # "tiny_cnn" or "resnet18"
    in_channels: int = 1
    out_dim: int = FEATURE_DIM
    tiny_widths: tuple[int, int, int] = (16, 32, 64)


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = BackboneConfig()
    projector_hidden: int = FEATURE_DIM
    projector_out: int = FEATURE_DIM

    def to_dict(self) -> dict:
        d = asdict(self)
        d["backbone"]["tiny_widths"] = list(self.backbone.tiny_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        bb = dict(d["backbone"])
        bb["tiny_widths"] = tuple(bb["tiny_widths"])
        return cls(BackboneConfig(**bb), d["projector_hidden"], d["projector_out"])

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class TinyCNN(nn.Module):
    """Three strided conv blocks and a linear map to ``out_dim``; for desk-scale runs."""

    def __init__(self, in_channels: int = 1, out_dim: int = FEATURE_DIM,
                 widths: tuple[int, int, int] = (16, 32, 64)):
        super().__init__()
        layers = []
        c_in = in_channels
        for w in widths:
            layers += [
                nn.Conv2d(c_in, w, 3, stride=2, padding=1, bias=False),
                nn.BatchNorm2d(w),
                nn.ReLU(inplace=True),
            ]
            c_in = w
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.fc = nn.Linear(c_in, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc(self.pool(self.features(x)).flatten(1))


def build_backbone(cfg: BackboneConfig) -> nn.Module:
    if cfg.in_channels not in (1, 3):
        raise ValueError("in_channels must be 1 or 3")
    if cfg.name == "tiny_cnn":
        return TinyCNN(cfg.in_channels, cfg.out_dim, cfg.tiny_widths)
    if cfg.name == "resnet18":
        net = torchvision.models.resnet18(weights=None)
        if cfg.in_channels != 3:
            net.conv1 = nn.Conv2d(cfg.in_channels, 64, kernel_size=7, stride=2, padding=3, bias=False)
        if cfg.out_dim != net.fc.in_features:
            net.fc = nn.Linear(net.fc.in_features, cfg.out_dim)
        else:
            net.fc = nn.Identity()
        return net
    raise ValueError(f"unknown backbone {cfg.name!r}")


def grid_pool(patch_embeddings: torch.Tensor) -> torch.Tensor:
    """Global average pooling over the 13x13 grid, i.e. the mean of the 169 patch vectors."""
    if patch_embeddings.ndim != 3 or patch_embeddings.shape[1] != N_PATCHES:
        raise ShapeViolation(
            f"shape violation: expected (N, {N_PATCHES}, D), got {tuple(patch_embeddings.shape)}"
        )
    return patch_embeddings.mean(dim=1)


class Projector(nn.Module):
    def __init__(self, in_dim: int = FEATURE_DIM, hidden: int = FEATURE_DIM, out_dim: int = FEATURE_DIM):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.act = nn.ReLU()
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class PatchEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig = ModelConfig()):
        super().__init__()
        self.cfg = cfg
        self.backbone = build_backbone(cfg.backbone)
        self.projector = Projector(cfg.backbone.out_dim, cfg.projector_hidden, cfg.projector_out)

    def encode_patches(self, grids: torch.Tensor) -> torch.Tensor:
        """(N, 169, C, 32, 32) -> (N, 169, D); all patches go through the backbone as one batch."""
        c = self.cfg.backbone.in_channels
        if grids.ndim == 4:
            grids = grids.unsqueeze(2)
        if grids.ndim != 5 or grids.shape[1] != N_PATCHES or grids.shape[-2:] != (PATCH_SIZE, PATCH_SIZE):
            raise ShapeViolation(
                f"shape violation: expected (N, {N_PATCHES}, C, {PATCH_SIZE}, {PATCH_SIZE}), "
                f"got {tuple(grids.shape)}"
            )
        if grids.shape[2] == 1 and c == 3:
            grids = grids.expand(-1, -1, 3, -1, -1)
        elif grids.shape[2] != c:
            raise ShapeViolation(f"shape violation: {grids.shape[2]} channels, backbone expects {c}")
        n = grids.shape[0]
        flat = grids.reshape(n * N_PATCHES, c, PATCH_SIZE, PATCH_SIZE)
        return self.backbone(flat).reshape(n, N_PATCHES, -1)

    def pooled(self, views: torch.Tensor) -> torch.Tensor:
        """(N, C, 224, 224) or (N, 224, 224) views -> (N, D) pooled features."""
        if views.ndim == 3:
            views = views.unsqueeze(1)
        return grid_pool(self.encode_patches(patchify_batch(views)))

    def project(self, pooled: torch.Tensor) -> torch.Tensor:
        if pooled.ndim != 2:
            raise ShapeViolation(f"shape violation: expected (N, D), got {tuple(pooled.shape)}")
        return self.projector(pooled)

    def forward(self, views: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.pooled(views)
        return h, self.project(h)


def save_checkpoint(path: str | Path, model: PatchEncoder, epoch: int,
                    extra: dict | None = None) -> Path:
    """Atomically write a checkpoint (write to a temp file, then rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": CHECKPOINT_FORMAT,
        "model_config": model.cfg.to_dict(),
        "config_hash": model.cfg.digest(),
        "epoch": int(epoch),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            torch.save(blob, fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> tuple[PatchEncoder, dict]:
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise IncompatibleCheckpoint(f"incompatible checkpoint: cannot read {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise IncompatibleCheckpoint(f"incompatible checkpoint: unknown format in {path}")
    cfg = ModelConfig.from_dict(blob["model_config"])
    if cfg.digest() != blob["config_hash"]:
        raise IncompatibleCheckpoint(f"incompatible checkpoint: config hash mismatch in {path}")
    if expected is not None and expected.digest() != blob["config_hash"]:
        raise IncompatibleCheckpoint(
            f"incompatible checkpoint: {path} was trained with config {blob['config_hash']}, "
            f"expected {expected.digest()}"
        )
    model = PatchEncoder(cfg)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    meta = {k: blob[k] for k in ("epoch", "config_hash", "extra")}
    return model, meta
