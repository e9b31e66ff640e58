"""PNG figures written next to the CLI's delimited outputs."""
from __future__ import annotations

from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .datagen.moving import MODES  # noqa: E402
from .networks import VARIANTS  # noqa: E402
from .report import MODE_LABELS, MODEL_LABELS, EvalReport  # noqa: E402

# no timestamps or versions in the PNG, so reruns give identical bytes
_META = {"Software": None}


def _save(fig, path) -> None:
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_report(report: EvalReport, path) -> None:
    """Grouped bars: test accuracy per dataset mode, one bar per model."""
    modes = [m for m in MODES if any(k[1] == m for k in report.cells)]
    variants = [v for v in VARIANTS if any(k[0] == v for k in report.cells)]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    width = 0.8 / max(len(variants), 1)
    x = np.arange(len(modes))
    for i, v in enumerate(variants):
        acc = [report.cells[(v, m)].accuracy if (v, m) in report.cells else np.nan for m in modes]
        ax.bar(x + (i - (len(variants) - 1) / 2) * width, acc, width, label=MODEL_LABELS[v])
    ax.axhline(1.0, color="k", lw=0.8, ls=":", label="uniform baseline")
    ax.set_xticks(x)
    ax.set_xticklabels([MODE_LABELS[m] for m in modes])
    ax.set_ylabel("test accuracy (%)")
    ax.set_ylim(0, 100)
    ax.legend(fontsize=8, loc="lower right")
    fig.tight_layout()
    _save(fig, path)


def plot_curves(curves: Dict[str, np.ndarray], path) -> None:
    """Per-epoch training loss; ``curves`` maps label -> [repetitions, epochs]."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for label, c in curves.items():
        c = np.atleast_2d(np.asarray(c))
        epochs = np.arange(1, c.shape[1] + 1)
        line, = ax.plot(epochs, c.mean(axis=0), marker="o", ms=3, label=label)
        for rep in c:
            ax.plot(epochs, rep, color=line.get_color(), alpha=0.25, lw=0.8)
    ax.set_xlabel("epoch")
    ax.set_ylabel("training loss")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_pairs(inputs: Sequence[np.ndarray], outputs: Sequence[np.ndarray], path,
               titles=("input", "transformed")) -> None:
    """Two-row montage: inputs on top, their transformed versions below."""
    n = len(inputs)
    fig, axes = plt.subplots(2, n, figsize=(1.6 * n, 3.4), squeeze=False)
    for j in range(n):
        for i, img in enumerate((inputs[j], outputs[j])):
            ax = axes[i, j]
            ax.imshow(img, cmap="gray", vmin=0, vmax=1 if np.asarray(img).dtype != np.uint8 else 255)
            ax.set_xticks([])
            ax.set_yticks([])
        axes[0, j].set_title(f"{j}", fontsize=8)
    axes[0, 0].set_ylabel(titles[0], fontsize=8)
    axes[1, 0].set_ylabel(titles[1], fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def plot_histogram(labels: np.ndarray, path, classes: int = 100) -> None:
    fig, ax = plt.subplots(figsize=(7, 2.5))
    ax.bar(np.arange(classes), np.bincount(labels, minlength=classes), width=1.0)
    ax.set_xlabel("class")
    ax.set_ylabel("sequences")
    fig.tight_layout()
    _save(fig, path)
