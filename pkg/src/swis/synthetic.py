"""Synthetic signature renderings and feature sets for tests and demos."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np


def writer_template(writer: int, n_strokes: int = 4, n_points: int = 6) -> list[np.ndarray]:
    """Control polylines (in unit coordinates) characterising one synthetic writer."""
    rng = np.random.default_rng(10_000 + writer)
    strokes = []
    for s in range(n_strokes):
        x = np.sort(rng.uniform(0.05, 0.95, n_points))
        y = 0.5 + 0.3 * np.sin(rng.uniform(1, 4) * x * np.pi + rng.uniform(0, np.pi)) * rng.uniform(0.3, 1)
        strokes.append(np.stack([x, y], axis=1))
    return strokes


def render_signature(writer: int, sample: int, height: int = 150, width: int = 300,
                     jitter: float = 0.02, thickness: int = 3) -> np.ndarray:
    """Dark strokes on a light page; samples of one writer share a template."""
    rng = np.random.default_rng([writer, sample])
    img = np.full((height, width), 245, dtype=np.uint8)
    margin = rng.integers(5, 25, size=2)
    for stroke in writer_template(writer):
        pts = stroke + rng.normal(0, jitter, stroke.shape)
        xy = np.stack([
            margin[0] + pts[:, 0] * (width - 2 * margin[0]),
            margin[1] + pts[:, 1] * (height - 2 * margin[1]),
        ], axis=1)
        cv2.polylines(img, [np.round(xy).astype(np.int32)], False, int(rng.integers(0, 40)),
                      thickness=thickness, lineType=cv2.LINE_AA)
    noise = rng.normal(0, 3, img.shape)
    return np.clip(img + noise, 0, 255).astype(np.uint8)


def synthetic_images(n_images: int, n_writers: int = 2) -> list[np.ndarray]:
    return [render_signature(i % n_writers, i // n_writers) for i in range(n_images)]


def write_bhsig_tree(root: Path, language: str = "hindi", n_genuine: int = 24, n_forged: int = 30,
                     writers: int | None = None, render: bool = False) -> Path:
    """Materialise a BHSig260-style directory tree (empty files unless ``render``)."""
    prefix = {"hindi": "H", "bengali": "B"}[language]
    writers = writers if writers is not None else {"hindi": 160, "bengali": 100}[language]
    for w in range(1, writers + 1):
        wdir = root / str(w)
        wdir.mkdir(parents=True, exist_ok=True)
        for kind, count in (("G", n_genuine), ("F", n_forged)):
            for k in range(1, count + 1):
                path = wdir / f"{prefix}-S-{w}-{kind}-{k:02d}.tif"
                if render:
                    img = render_signature(w if kind == "G" else w + 7919, k)
                    cv2.imwrite(str(path), img)
                else:
                    path.touch()
    return root


def separable_features(n_writers: int = 5, n_ref: int = 8, n_genuine: int = 16, n_forged: int = 30,
                       dim: int = 512, sigma: float = 0.05, seed: int = 0):
    """Writer clusters on orthogonal axes; forgeries of writer w sit on writer w+1's axis.

    Forgeries are therefore displaced by far more than 10 sigma from their
    claimed writer's cluster. Returns ``(features, writer_ids, labels, roles)``.
    """
    rng = np.random.default_rng(seed)
    centres = np.zeros((n_writers, dim))
    for w in range(n_writers):
        centres[w, w % dim] = 10.0
    feats, writers, labels, roles = [], [], [], []
    for w in range(n_writers):
        for role, label, count, centre in (
            ("reference", "genuine", n_ref, centres[w]),
            ("query", "genuine", n_genuine, centres[w]),
            ("query", "forged", n_forged, centres[(w + 1) % n_writers]),
        ):
            feats.append(centre + rng.normal(0, sigma, (count, dim)))
            writers += [f"w{w:03d}"] * count
            labels += [label] * count
            roles += [role] * count
    return np.concatenate(feats).astype(np.float32), writers, labels, roles
