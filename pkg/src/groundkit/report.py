"""Matplotlib figure rendering for CLI report outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.patches as mpatches
import matplotlib.pyplot as plt
import numpy as np

from .boxsearch import BoundingBox
from .evalharness import EvalReport


def render_heatmap_figure(
    image: np.ndarray,
    heat: np.ndarray,
    path: str | Path,
    box: BoundingBox | None = None,
    gt_box: BoundingBox | None = None,
    title: str | None = None,
) -> None:
    """Score-map overlay on the input image, with optional predicted/gt boxes."""
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(np.asarray(image).transpose(1, 2, 0))
    ax.imshow(np.log(np.asarray(heat, dtype=np.float64)), cmap="jet", alpha=0.45)
    for b, color in ((box, "red"), (gt_box, "yellow")):
        if b is not None:
            ax.add_patch(
                mpatches.Rectangle(
                    (b.y2 - 0.5, b.y1 - 0.5),
                    b.y4 - b.y2 + 1,
                    b.y3 - b.y1 + 1,
                    fill=False, edgecolor=color, linewidth=2,
                )
            )
    if title:
        ax.set_title(title)
    ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_bench_figure(rows: list[dict], path: str | Path) -> None:
    """Bar chart of mean search times with std error bars."""
    rows = [r for r in rows if r.get("mean_s") is not None]
    fig, ax = plt.subplots(figsize=(5, 4))
    names = [r["method"] for r in rows]
    means = [r["mean_s"] for r in rows]
    stds = [r["std_s"] for r in rows]
    ax.bar(names, means, yerr=stds, capsize=4, color="steelblue")
    ax.set_ylabel("search time (s)")
    ax.set_yscale("log")
    ax.set_title("Box search timing")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_eval_figure(report: EvalReport, path: str | Path) -> None:
    """IoU histogram with the accuracy threshold marked."""
    ious = [r.iou for r in report.rows if r.iou is not None]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.hist(ious, bins=20, range=(0, 1), color="steelblue", edgecolor="white")
    ax.axvline(report.threshold, color="red", linestyle="--", label=f"thr={report.threshold}")
    ax.set_xlabel("IoU")
    ax.set_ylabel("records")
    ax.set_title(f"Acc@{report.threshold} = {report.accuracy:.3f}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
