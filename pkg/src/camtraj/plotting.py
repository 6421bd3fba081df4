"""Report figures.

Figures are built on ``matplotlib.figure.Figure`` directly (no pyplot state),
so the CLI can render from worker threads and headless machines.
"""
from __future__ import annotations

from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

from .analysis import DIRECTION_LABELS, TURN_LABELS

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 7,
    "ytick.labelsize": 7,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

# no timestamps/software tags, so reruns produce identical files
_PNG_META = {"Software": None}


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    return path


def category_label(category: int) -> str:
    d, t = divmod(int(category), len(TURN_LABELS))
    return f"{DIRECTION_LABELS[d]}/{TURN_LABELS[t]}"


def plot_category_histogram(before: dict, after: dict | None, path) -> Path:
    """Bar chart of trajectories per category before (and after) balancing."""
    cats = sorted({int(c) for c in before} | {int(c) for c in (after or {})})
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(max(4.0, 0.5 * len(cats) + 2), 3.2))
        ax = fig.add_subplot()
        x = range(len(cats))
        width = 0.4 if after is not None else 0.8
        ax.bar([i - width / 2 if after is not None else i for i in x],
               [before.get(str(c), before.get(c, 0)) for c in cats], width, label="before")
        if after is not None:
            ax.bar([i + width / 2 for i in x],
                   [after.get(str(c), after.get(c, 0)) for c in cats], width, label="after")
            ax.legend(frameon=False)
        ax.set_xticks(list(x))
        ax.set_xticklabels([category_label(c) for c in cats], rotation=45, ha="right")
        ax.set_ylabel("trajectories")
        ax.set_title("trajectory categories")
        fig.tight_layout()
        return _save(fig, path)


def plot_trajectory(centers, path, keypoints=(), title: str = "") -> Path:
    """Top-down (x/z) view of camera centers with keypoints marked."""
    C = np.asarray(centers, dtype=float)
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(3.6, 3.6))
        ax = fig.add_subplot()
        ax.plot(C[:, 0], C[:, 2], "-", lw=1.2, color="0.3")
        ax.plot(C[:1, 0], C[:1, 2], "o", ms=4, color="tab:green", label="start")
        if len(keypoints):
            k = np.asarray(keypoints, dtype=int)
            ax.plot(C[k, 0], C[k, 2], "s", ms=4, color="tab:red", label="keypoint")
        ax.set_aspect("equal", adjustable="datalim")
        ax.set_xlabel("x")
        ax.set_ylabel("z")
        ax.legend(frameon=False, loc="best")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_scales(scene_scales: dict, path) -> Path:
    """Per-video metric scene scale."""
    vids = sorted(scene_scales)
    with matplotlib.rc_context(STYLE):
        fig = Figure(figsize=(max(4.0, 0.35 * len(vids) + 2), 3.0))
        ax = fig.add_subplot()
        ax.bar(range(len(vids)), [scene_scales[v] for v in vids], color="tab:blue")
        ax.set_xticks(list(range(len(vids))))
        ax.set_xticklabels(vids, rotation=45, ha="right")
        ax.set_ylabel("scene scale (m / SfM unit)")
        ax.set_title("metric calibration")
        fig.tight_layout()
        return _save(fig, path)
