"""Matplotlib figure rendering for reports.

Figures accompany the delimited outputs: score maps for pipeline runs, and
ROC / DCA / confusion-matrix plots for evaluation runs. All rendering uses
the Agg backend so it works headless.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

from .metrics import ConfusionMatrix, DcaCurve, RocCurve  # noqa: E402
from .render import SCORE_COLORS  # noqa: E402
from .scoring import Her2Score, SlideScore  # noqa: E402
from .tiling import GridSpec  # noqa: E402

_SAVE_KW = dict(dpi=120, bbox_inches="tight", metadata={"Software": "her2score"})


def save_score_map(slide: SlideScore, spec: GridSpec, path: Path | str) -> Path:
    """Patch-grid heat figure of the per-patch HER2 scores."""
    grid = np.zeros((spec.rows, spec.cols), dtype=np.int8)
    for record in slide.patch_records:
        grid[record.coord.row, record.coord.col] = int(record.score)
    cmap = ListedColormap([np.asarray(SCORE_COLORS[s]) / 255 for s in Her2Score])
    fig, ax = plt.subplots(figsize=(max(4, spec.cols * 0.3), max(3, spec.rows * 0.3)))
    im = ax.imshow(grid, cmap=cmap, vmin=-0.5, vmax=3.5, interpolation="nearest")
    cbar = fig.colorbar(im, ax=ax, ticks=[0, 1, 2, 3])
    cbar.ax.set_yticklabels([s.text for s in Her2Score])
    ax.set_title(
        f"WSI score {slide.wsi_score.text}, "
        f"coverage {slide.coverage_pct:.1f}% ({slide.binary_status.value})"
    )
    ax.set_xlabel("column")
    ax.set_ylabel("row")
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_roc_figure(curves: Dict[str, RocCurve], path: Path | str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    for label, curve in sorted(curves.items()):
        xs = [p[0] for p in curve.points]
        ys = [p[1] for p in curve.points]
        ax.plot(xs, ys, label=f"{label} (AUC {curve.auc:.3f})")
    ax.plot([0, 1], [0, 1], ls="--", color="gray", lw=1, label="chance")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("ROC (one vs rest)")
    ax.legend(loc="lower right", fontsize=8)
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_dca_figure(curves: Dict[str, DcaCurve], path: Path | str) -> Path:
    n = max(1, len(curves))
    fig, axes = plt.subplots(1, n, figsize=(4 * n, 3.5), squeeze=False)
    for ax, (label, curve) in zip(axes[0], sorted(curves.items())):
        ax.plot(curve.thresholds, curve.model_nb, label="model")
        ax.plot(curve.thresholds, curve.treat_all_nb, ls="--", label="treat all")
        ax.plot(curve.thresholds, curve.treat_none_nb, ls=":", color="black", label="treat none")
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("threshold probability")
        ax.set_ylabel("net benefit")
        ax.legend(fontsize=7)
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path


def save_confusion_figure(matrix: ConfusionMatrix, path: Path | str) -> Path:
    n = len(matrix.labels)
    fig, ax = plt.subplots(figsize=(1.2 * n + 2, 1.2 * n + 1.5))
    im = ax.imshow(matrix.counts, cmap="Blues")
    ax.set_xticks(range(n), matrix.labels, rotation=45, ha="right")
    ax.set_yticks(range(n), matrix.labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = matrix.counts.max() / 2 if matrix.total else 0
    for i in range(n):
        for j in range(n):
            color = "white" if matrix.counts[i, j] > threshold else "black"
            ax.text(j, i, str(matrix.counts[i, j]), ha="center", va="center", color=color)
    fig.colorbar(im, ax=ax)
    path = Path(path)
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
    return path
