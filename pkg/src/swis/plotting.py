"""Figure helpers. Uses the non-interactive Agg backend so output files are reproducible."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FONTSIZE = 9  # pt

RC = {
    "font.size": FONTSIZE,
    "axes.titlesize": FONTSIZE,
    "axes.labelsize": FONTSIZE,
    "legend.fontsize": FONTSIZE - 1,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "figure.figsize": (5.0, 5.0),
    "axes.grid": False,
    "axes.edgecolor": "black",
    "svg.hashsalt": "swis",
}

# metadata left out of PNGs so identical inputs give identical bytes
_PNG_METADATA = {"Software": None}


def scatter_by_label(points: np.ndarray, labels: Sequence[str], out_path: str | Path,
                     title: str = "", max_legend: int = 20) -> Path:
    """2-D scatter with one colour per label; writes a PNG."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    labels = np.asarray(labels)
    classes = sorted(set(labels.tolist()))
    cmap = plt.get_cmap("tab20" if len(classes) > 10 else "tab10")
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for i, cls in enumerate(classes):
            sel = labels == cls
            ax.scatter(points[sel, 0], points[sel, 1], s=8, color=cmap(i % cmap.N),
                       label=str(cls), linewidths=0)
        ax.set_xticks([])
        ax.set_yticks([])
        if title:
            ax.set_title(title)
        if len(classes) <= max_legend:
            ax.legend(loc="best", markerscale=2, frameon=False)
        fig.tight_layout()
        fig.savefig(out_path, format="png", metadata=_PNG_METADATA)
        plt.close(fig)
    return out_path


def plot_training_curves(rows: Sequence[dict], out_path: str | Path) -> Path:
    """Loss terms and matrix statistics against step."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    steps = [r["step"] for r in rows]
    with plt.rc_context(RC):
        fig, (ax0, ax1) = plt.subplots(2, 1, sharex=True, figsize=(6.0, 5.0))
        for key in ("total", "on_diag", "off_diag"):
            ax0.plot(steps, [r[key] for r in rows], label=key, lw=1)
        ax0.set_yscale("log")
        ax0.set_ylabel("loss")
        ax0.legend(frameon=False)
        ax1.plot(steps, [r["mean_abs_offdiag"] for r in rows], label="mean |C_ij|, i != j", lw=1)
        ax1.plot(steps, [r["mean_diag"] for r in rows], label="mean C_ii", lw=1)
        ax1.set_xlabel("step")
        ax1.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(out_path, format="png", metadata=_PNG_METADATA)
        plt.close(fig)
    return out_path
