"""Report figures: ablation F1 bars, predicted cause-count shares and loss curves.

Everything renders through the Agg backend straight to PNG files, so no
display is needed. PNG metadata is stripped to keep files byte-stable.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_ablation(result, path) -> Path:
    """Mean F1 per variant, with each repetition drawn as a dot."""
    variants = result.variants()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.1 * len(variants) + 2, 3.2))
        x = np.arange(len(variants))
        ax.bar(x, [result.mean(v, "f1") for v in variants], color="0.75", width=0.6)
        for k, v in enumerate(variants):
            f = [r.f1 for r in result.rows(v)]
            ax.plot(np.full(len(f), x[k]), f, "o", color="C0", ms=3)
        ax.set_xticks(x, variants, rotation=20)
        ax.set_ylim(0, 1)
        ax.set_ylabel("F1")
        fig.tight_layout()
        return _save(fig, path)


def plot_cause_counts(result, path, cap: int = 3) -> Path:
    """Grouped bars: share of test documents with 0, 1, 2, ... predicted causes."""
    variants = result.variants()
    counts = list(range(cap + 1))
    width = 0.8 / max(len(variants), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for k, v in enumerate(variants):
            hists = result.histograms[v]
            shares = [np.mean([h.get(c, 0.0) for h in hists]) for c in counts]
            ax.bar(np.arange(len(counts)) + k * width, shares, width, label=v)
        ax.set_xticks(np.arange(len(counts)) + 0.4 - width / 2,
                      [str(c) if c < cap else f"{cap}+" for c in counts])
        ax.set_xlabel("predicted causes per document")
        ax.set_ylabel("share of documents")
        ax.legend(fontsize=7)
        fig.tight_layout()
        return _save(fig, path)


def plot_loss_curves(history: Sequence, path) -> Path:
    """Per-epoch mean losses from a training history."""
    epochs = [h.epoch for h in history]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3))
        ax.plot(epochs, [h.loss.total for h in history], "-o", ms=3, label="total")
        ax.plot(epochs, [h.loss.cause for h in history], "-", label="cause")
        if any(h.loss.position for h in history):
            ax.plot(epochs, [h.loss.position for h in history], "-", label="position")
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss per document")
        ax.legend()
        fig.tight_layout()
        return _save(fig, path)
