"""Pseudo cross-covariance decorrelation loss and the NT-Xent baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DegenerateDimension, InvalidTemperature, ShapeViolation

log = logging.getLogger(__name__)

EPS = 1e-12

# running count of zero-norm columns met by normalize_center
degenerate_columns = 0


def normalize_columns(z: torch.Tensor, eps: float = EPS, strict: bool = False) -> torch.Tensor:
    """Scale every dimension (column) to unit L2 norm over the batch."""
    global degenerate_columns
    if z.ndim != 2 or z.shape[0] < 1:
        raise ShapeViolation(f"shape violation: expected (N, D) with N >= 1, got {tuple(z.shape)}")
    norms = z.norm(dim=0)
    dead = int((norms == 0).sum())
    if dead:
        if strict:
            raise DegenerateDimension(f"degenerate dimension: {dead} all-zero column(s)")
        degenerate_columns += dead
        log.warning("degenerate dimension: %d all-zero column(s)", dead)
    return z / (norms + eps)


def normalize_center(z: torch.Tensor, mode: str = "batch", eps: float = EPS,
                     strict: bool = False) -> torch.Tensor:
    """Per-dimension batch normalization followed by per-dimension centering.

    ``mode="vector"`` instead scales each row to the unit sphere before
    centering (ablation only).
    """
    if mode == "batch":
        zbar = normalize_columns(z, eps, strict)
    elif mode == "vector":
        if z.ndim != 2:
            raise ShapeViolation(f"shape violation: expected (N, D), got {tuple(z.shape)}")
        zbar = z / (z.norm(dim=1, keepdim=True) + eps)
    else:
        raise ValueError(f"unknown normalization mode {mode!r}")
    return zbar - zbar.mean(dim=0, keepdim=True)


def pseudo_cross_cov(z: torch.Tensor, z_prime: torch.Tensor) -> torch.Tensor:
    """C[i, j] = sum_k z[k, i] * z_prime[k, j]."""
    if z.ndim != 2 or z.shape != z_prime.shape:
        raise ShapeViolation(
            f"shape violation: views must share an (N, D) shape, got {tuple(z.shape)} and {tuple(z_prime.shape)}"
        )
    return z.T @ z_prime


@dataclass
class LossValue:
    total: torch.Tensor
    on_diag: torch.Tensor
    off_diag: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"total": float(self.total), "on_diag": float(self.on_diag), "off_diag": float(self.off_diag)}


def swis_loss(z: torch.Tensor, z_prime: torch.Tensor) -> LossValue:
    """Decorrelation loss on already normalized-and-centered views.

    Both terms carry the same 1/N factor and the matrix is taken in the single
    order (z, z_prime); no symmetrization.
    """
    c = pseudo_cross_cov(z, z_prime)
    n = z.shape[0]
    diag = torch.diagonal(c)
    on = (diag - 1).pow(2).sum() / n
    off = (c.pow(2).sum() - diag.pow(2).sum()) / n
    return LossValue(on + off, on, off)


def swis_loss_grad(z: torch.Tensor, z_prime: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Closed-form gradient of the total loss w.r.t. both views.

    The loss is ||C - I||_F^2 / N, so dL/dC = 2 (C - I) / N, and with
    C = z^T z' the chain rule gives dL/dz = z' (dL/dC)^T, dL/dz' = z dL/dC.
    """
    c = pseudo_cross_cov(z, z_prime)
    n = z.shape[0]
    g = 2.0 * (c - torch.eye(c.shape[0], dtype=c.dtype, device=c.device)) / n
    return z_prime @ g.T, z @ g


def nt_xent_loss(views: torch.Tensor, temperature: float = 0.5) -> torch.Tensor:
    """NT-Xent over 2N rows where rows (2k, 2k+1) form a positive pair.

    Each row is scored against every other row by cosine similarity; the loss
    is the mean over all 2N anchors. A single pair has no negatives and so
    gives exactly zero.
    """
    if temperature <= 0:
        raise InvalidTemperature(f"invalid temperature: {temperature}")
    if views.ndim != 2 or views.shape[0] % 2 or views.shape[0] == 0:
        raise ShapeViolation(f"shape violation: expected (2N, D), got {tuple(views.shape)}")
    m = views.shape[0]
    if m == 2:
        return views.new_zeros(())
    u = F.normalize(views, dim=1)
    logits = (u @ u.T) / temperature
    logits = logits.masked_fill(torch.eye(m, dtype=torch.bool, device=views.device), float("-inf"))
    targets = torch.arange(m, device=views.device) ^ 1
    return F.cross_entropy(logits, targets)


def interleave(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Stack two (N, D) views into (2N, D) with row 2k from ``a`` and 2k+1 from ``b``."""
    return torch.stack([a, b], dim=1).reshape(-1, a.shape[1])


def diagnostics(z: torch.Tensor, z_prime: torch.Tensor) -> dict[str, float]:
    """Matrix statistics logged each training step."""
    with torch.no_grad():
        c = pseudo_cross_cov(z, z_prime)
        d = c.shape[0]
        diag = torch.diagonal(c)
        off_abs = c.abs().sum() - diag.abs().sum()
        return {
            "mean_abs_offdiag": float(off_abs / (d * (d - 1))) if d > 1 else 0.0,
            "mean_diag": float(diag.mean()),
        }
