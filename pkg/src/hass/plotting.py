"""Figure output for training traces, confusion matrices and HASS comparisons."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import STAGE_COLUMNS, ConfusionMatrix, MetricsReport  # noqa: E402
from .stages import STAGES  # noqa: E402

RC = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

HASS_COLORS = {True: "#1f5fa8", False: "#b0b0b0"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_trace(trace, path: str | Path, title: str = "training") -> Path:
    """Loss (left axis) and running accuracy (right axis) per training epoch."""
    epochs = [s.epoch for s in trace]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4.5, 3.0))
        ax.plot(epochs, [s.loss for s in trace], color="#1f5fa8", marker=".", label="loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("cross-entropy")
        if trace and min(s.loss for s in trace) > 0:
            ax.set_yscale("log")
        ax2 = ax.twinx()
        ax2.plot(epochs, [s.accuracy for s in trace], color="#d1495b", marker=".", label="accuracy")
        ax2.set_ylabel("accuracy")
        ax2.set_ylim(0, 1.02)
        ax.set_title(title)
        return _save(fig, path)


def plot_confusion(cm: ConfusionMatrix, path: str | Path, title: str = "confusion") -> Path:
    counts = cm.counts
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        ax.imshow(counts, cmap="Blues")
        ax.set_xticks(range(len(STAGES)), STAGE_COLUMNS)
        ax.set_yticks(range(len(STAGES)), STAGE_COLUMNS)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        hi = counts.max() if counts.size else 0
        for i in range(counts.shape[0]):
            for j in range(counts.shape[1]):
                ax.text(j, i, str(counts[i, j]), ha="center", va="center",
                        color="white" if counts[i, j] > hi / 2 else "black", fontsize=7)
        ax.set_title(title)
        return _save(fig, path)


def plot_comparison(rows: Sequence[tuple[str, bool, MetricsReport]], path: str | Path,
                    title: str = "per-stage F1") -> Path:
    """Grouped bars: overall F1, accuracy, and per-stage F1 for each table row."""
    labels = ["F1", "Acc"] + list(STAGE_COLUMNS)
    x = np.arange(len(labels))
    width = 0.8 / max(len(rows), 1)
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6.0, 3.0))
        for i, (tag, flag, r) in enumerate(rows):
            values = [r.overall_f1, r.accuracy] + [r.per_stage_f1[s] for s in STAGES]
            ax.bar(x + (i - (len(rows) - 1) / 2) * width, values, width,
                   label=f"{tag} / HASS {'Yes' if flag else 'No'}",
                   color=HASS_COLORS[flag], edgecolor="black", linewidth=0.4,
                   hatch="" if i % 2 == 0 else "//")
        ax.set_xticks(x, labels)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("score")
        ax.legend(frameon=False, loc="upper left", bbox_to_anchor=(1.0, 1.0))
        ax.set_title(title)
        return _save(fig, path)
