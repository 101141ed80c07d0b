"""Binarization, tight cropping, augmentation and overlapping patch grids."""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import cv2
import numpy as np
import torch

from .errors import BlankImage, BlankSignature, ShapeViolation
from .rng import Lcg64, derive_seed

VIEW_SIZE = 224
PATCH_SIZE = 32
PATCH_STRIDE = 16
GRID_SIDE = (VIEW_SIZE - PATCH_SIZE) // PATCH_STRIDE + 1  # 13
N_PATCHES = GRID_SIDE * GRID_SIDE  # 169

# augmentation never upsamples below this side length before cropping
_MIN_SIDE = 8


def otsu_threshold(image: np.ndarray) -> int:
    """Otsu threshold of an 8-bit image.

    Pixels ``<= t`` form the first class. The between-class variance is
    compared in exact integer arithmetic so that ties resolve to the smallest
    ``t`` regardless of floating point noise.
    """
    img = np.asarray(image)
    if img.size == 0:
        raise ValueError("empty image")
    hist = np.bincount(img.astype(np.uint8, copy=False).ravel(), minlength=256)
    n = int(img.size)
    total = int(np.dot(hist, np.arange(256, dtype=np.int64)))

    best_t, best_num, best_den = -1, 0, 1
    n0 = s0 = 0
    for t in range(256):
        n0 += int(hist[t])
        s0 += t * int(hist[t])
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        # n^2 * var_between = (s0*n - n0*S)^2 / (n0*n1)
        num = (s0 * n - n0 * total) ** 2
        den = n0 * n1
        if num * best_den > best_num * den:
            best_t, best_num, best_den = t, num, den
    if best_num == 0:
        raise BlankImage("blank image: no threshold separates the intensities")
    return best_t


def ink_mask(image: np.ndarray, t: int) -> np.ndarray:
    """Boolean ink mask: dark pixels (``<= t``) on light paper become True."""
    return np.asarray(image) <= t


def ink_bbox(image: np.ndarray, t: int) -> tuple[int, int, int, int]:
    """Return ``(top, bottom, left, right)`` (inclusive) of all ink pixels."""
    mask = ink_mask(image, t)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise BlankSignature("blank signature: no ink pixels")
    return int(rows[0]), int(rows[-1]), int(cols[0]), int(cols[-1])


def tight_crop(image: np.ndarray, t: int) -> np.ndarray:
    """Crop to the least-area axis-aligned box containing every ink pixel."""
    top, bottom, left, right = ink_bbox(image, t)
    return np.asarray(image)[top:bottom + 1, left:right + 1].copy()


def otsu_crop(image: np.ndarray) -> np.ndarray:
    return tight_crop(image, otsu_threshold(image))


def to_unit_range(pixels: np.ndarray) -> np.ndarray:
    """Map intensities in [0, 255] to [-1, 1]."""
    return (np.asarray(pixels, dtype=np.float64) / 127.5 - 1.0).astype(np.float32)


@dataclass(frozen=True)
class AugmentConfig:
    brightness: tuple[float, float] = (0.6, 1.4)
    contrast: tuple[float, float] = (0.6, 1.4)
    rotation_deg: float = 10.0
    translate_frac: float = 0.1
    shear_deg: float = 10.0
    crop_scale: tuple[float, float] = (0.8, 1.0)
    size: int = VIEW_SIZE

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls((1.0, 1.0), (1.0, 1.0), 0.0, 0.0, 0.0, (1.0, 1.0))


@dataclass(frozen=True)
class AugmentParams:
    brightness: float = 1.0
    contrast: float = 1.0
    rotation_deg: float = 0.0
    translate: tuple[float, float] = (0.0, 0.0)  # fractions of (width, height)
    shear_deg: float = 0.0
    crop_scale: float = 1.0
    crop_offset: tuple[float, float] = (0.0, 0.0)  # fractions of the free margin (y, x)

    @property
    def is_identity_affine(self) -> bool:
        return self.rotation_deg == 0 and self.shear_deg == 0 and self.translate == (0.0, 0.0)


def sample_params(seed: int, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    rng = Lcg64(seed)
    return AugmentParams(
        brightness=rng.uniform(*cfg.brightness),
        contrast=rng.uniform(*cfg.contrast),
        rotation_deg=rng.uniform(-cfg.rotation_deg, cfg.rotation_deg),
        translate=(rng.uniform(-cfg.translate_frac, cfg.translate_frac),
                   rng.uniform(-cfg.translate_frac, cfg.translate_frac)),
        shear_deg=rng.uniform(-cfg.shear_deg, cfg.shear_deg),
        crop_scale=rng.uniform(*cfg.crop_scale),
        crop_offset=(rng.random(), rng.random()),
    )


def _affine_matrix(params: AugmentParams, width: int, height: int) -> np.ndarray:
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    a = math.radians(params.rotation_deg)
    sh = math.radians(params.shear_deg)
    rot = np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])
    shear = np.array([[1.0, math.tan(sh)], [0.0, 1.0]])
    lin = rot @ shear
    centre = np.array([cx, cy])
    shift = np.array([params.translate[0] * width, params.translate[1] * height])
    offset = centre + shift - lin @ centre
    return np.hstack([lin, offset[:, None]])


def apply_params(image: np.ndarray, params: AugmentParams, size: int = VIEW_SIZE) -> np.ndarray:
    """Apply one augmentation draw to an 8-bit crop, returning ``size x size`` float32 in [-1, 1]."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim != 2 or img.size == 0:
        raise ShapeViolation(f"shape violation: expected a nonempty 2-D image, got {img.shape}")
    h, w = img.shape
    if min(h, w) < _MIN_SIDE:
        k = _MIN_SIDE / min(h, w)
        h, w = max(_MIN_SIDE, round(h * k)), max(_MIN_SIDE, round(w * k))
        img = cv2.resize(img, (w, h), interpolation=cv2.INTER_NEAREST)

    if not params.is_identity_affine:
        img = cv2.warpAffine(img, _affine_matrix(params, w, h), (w, h),
                             flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT,
                             borderValue=255.0)

    side = math.sqrt(params.crop_scale)
    ch, cw = max(1, round(h * side)), max(1, round(w * side))
    y0 = int(params.crop_offset[0] * (h - ch + 1)) if ch < h else 0
    x0 = int(params.crop_offset[1] * (w - cw + 1)) if cw < w else 0
    img = img[y0:y0 + ch, x0:x0 + cw]
    if img.shape != (size, size):
        img = cv2.resize(img, (size, size), interpolation=cv2.INTER_LINEAR)

    out = img.astype(np.float64)
    if params.brightness != 1.0:
        out = out * params.brightness
    if params.contrast != 1.0:
        mean = out.mean()
        out = mean + params.contrast * (out - mean)
    out = np.clip(out, 0.0, 255.0)
    return to_unit_range(out)


@dataclass(frozen=True)
class View:
    pixels: np.ndarray  # (224, 224) float32 in [-1, 1]
    augmentation_seed: int


def augment(image: np.ndarray, seed: int, cfg: AugmentConfig = AugmentConfig()) -> View:
    params = sample_params(seed, cfg)
    return View(apply_params(image, params, cfg.size), seed)


def make_view_pair(image: np.ndarray, seed: int,
                   cfg: AugmentConfig = AugmentConfig()) -> tuple[View, View]:
    """Two independent augmentations of the same image (a positive pair)."""
    s1, s2 = derive_seed(seed, 1), derive_seed(seed, 2)
    return augment(image, s1, cfg), augment(image, s2, cfg)


def eval_view(image: np.ndarray, size: int = VIEW_SIZE) -> np.ndarray:
    """Deterministic evaluation input: Otsu crop, bilinear resize, range mapping."""
    crop = otsu_crop(image).astype(np.float32)
    if crop.shape != (size, size):
        crop = cv2.resize(crop, (size, size), interpolation=cv2.INTER_LINEAR)
    return to_unit_range(np.clip(crop, 0, 255))


@dataclass(frozen=True)
class PatchGrid:
    patches: np.ndarray  # (169, 32, 32), row-major over the 13 x 13 grid
    grid_shape: tuple[int, int] = (GRID_SIDE, GRID_SIDE)
    stride: int = PATCH_STRIDE
    patch_size: int = PATCH_SIZE
    coords: list[tuple[int, int]] = field(
        default_factory=lambda: [(r, c) for r in range(GRID_SIDE) for c in range(GRID_SIDE)]
    )

    def patch(self, r: int, c: int) -> np.ndarray:
        return self.patches[r * self.grid_shape[1] + c]


def patchify(view: View | np.ndarray) -> PatchGrid:
    pixels = view.pixels if isinstance(view, View) else np.asarray(view)
    if pixels.shape != (VIEW_SIZE, VIEW_SIZE):
        raise ShapeViolation(f"shape violation: expected {VIEW_SIZE}x{VIEW_SIZE}, got {pixels.shape}")
    windows = np.lib.stride_tricks.sliding_window_view(pixels, (PATCH_SIZE, PATCH_SIZE))
    grid = windows[::PATCH_STRIDE, ::PATCH_STRIDE]
    return PatchGrid(np.ascontiguousarray(grid.reshape(N_PATCHES, PATCH_SIZE, PATCH_SIZE)))


def patchify_batch(x: torch.Tensor) -> torch.Tensor:
    """(B, C, 224, 224) -> (B, 169, C, 32, 32), same row-major order as :func:`patchify`."""
    if x.ndim != 4 or x.shape[-2:] != (VIEW_SIZE, VIEW_SIZE):
        raise ShapeViolation(f"shape violation: expected (B, C, {VIEW_SIZE}, {VIEW_SIZE}), got {tuple(x.shape)}")
    p = x.unfold(2, PATCH_SIZE, PATCH_STRIDE).unfold(3, PATCH_SIZE, PATCH_STRIDE)
    b, c = x.shape[:2]
    # (B, C, 13, 13, 32, 32) -> (B, 13, 13, C, 32, 32)
    p = p.permute(0, 2, 3, 1, 4, 5)
    return p.reshape(b, N_PATCHES, c, PATCH_SIZE, PATCH_SIZE)


def overlap_add(grid: PatchGrid) -> np.ndarray:
    """Rebuild the view by averaging every patch that covers each pixel."""
    acc = np.zeros((VIEW_SIZE, VIEW_SIZE), dtype=np.float64)
    hits = np.zeros_like(acc)
    for (r, c), patch in zip(grid.coords, grid.patches):
        y, x = r * grid.stride, c * grid.stride
        acc[y:y + grid.patch_size, x:x + grid.patch_size] += patch
        hits[y:y + grid.patch_size, x:x + grid.patch_size] += 1
    return acc / hits
