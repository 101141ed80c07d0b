"""Slow reference computations used to cross-check the fast paths.

Each function here is written from the defining formula with explicit loops
and shares no code with the implementation it checks.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable

import numpy as np


def otsu_brute_force(image: np.ndarray) -> int | None:
    """Exhaustive argmax of the between-class variance over all 256 thresholds.

    Evaluated in exact rational arithmetic; returns ``None`` when every
    threshold scores zero.
    """
    pixels = [int(v) for v in np.asarray(image).ravel()]
    n = len(pixels)
    best_t, best = None, Fraction(0)
    for t in range(256):
        low = [v for v in pixels if v <= t]
        high = [v for v in pixels if v > t]
        if not low or not high:
            continue
        w0, w1 = Fraction(len(low), n), Fraction(len(high), n)
        mu0, mu1 = Fraction(sum(low), len(low)), Fraction(sum(high), len(high))
        score = w0 * w1 * (mu0 - mu1) ** 2
        if score > best:
            best_t, best = t, score
    return best_t


def loss_loops(z: np.ndarray, zp: np.ndarray) -> tuple[float, float, float]:
    """(total, on_diag, off_diag) by explicit triple summation."""
    n, d = z.shape
    off = 0.0
    on = 0.0
    for i in range(d):
        for j in range(d):
            c = 0.0
            for k in range(n):
                c += float(z[k, i]) * float(zp[k, j])
            if i == j:
                on += (c - 1.0) ** 2
            else:
                off += c * c
    return (on + off) / n, on / n, off / n


def central_difference(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Gradient of scalar ``f`` at ``x`` by central differences, one coordinate at a time."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        orig = x[idx]
        x[idx] = orig + h
        fp = f(x)
        x[idx] = orig - h
        fm = f(x)
        x[idx] = orig
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def momentum_sgd(w: np.ndarray, g: np.ndarray, buf: np.ndarray, lr: float, momentum: float):
    """Plain heavy-ball step: buf <- momentum*buf + lr*g; w <- w - buf."""
    new_buf = momentum * buf + lr * g
    return w - new_buf, new_buf


def accuracy_from_rates(n_genuine: int, n_forged: int, far: float, frr: float) -> float:
    return (n_genuine * (1 - frr) + n_forged * (1 - far)) / (n_genuine + n_forged)
