"""SVG figures for the CLI reports.

Everything renders through matplotlib's Agg canvas into SVG files.  The
element-id salt and the date metadata are pinned so reruns give identical
bytes, which lets the experiment manifest hash the figures.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_RC = {
    "svg.hashsalt": "chrono-dce",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "figure.figsize": (5.5, 3.4),
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def noise_curves(acc: Mapping[str, Mapping[float, float]], path, title: str = "accuracy under input noise") -> Path:
    """One line per model: mean accuracy against epsilon."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for name, by_eps in acc.items():
            eps = sorted(by_eps)
            ax.plot(eps, [100.0 * by_eps[e] for e in eps], marker="o", label=name)
        ax.set_xlabel("noise epsilon")
        ax.set_ylabel("accuracy (%)")
        ax.set_title(title)
        ax.legend(frameon=False)
        return _save(fig, path)


def probe_curves(curves: Mapping[str, Sequence[float]], path, title: str = "per-frame probe outputs") -> Path:
    """Normalized chronological values, one panel per input kind."""
    kinds = list(curves)
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(kinds), figsize=(3.0 * len(kinds), 2.8), sharey=True, squeeze=False)
        for ax, kind in zip(axes[0], kinds):
            v = curves[kind]
            ax.plot(range(len(v)), v, lw=1.2)
            ax.set_title(kind)
            ax.set_xlabel("output frame")
            ax.set_ylim(-0.05, 1.05)
        axes[0][0].set_ylabel("normalized value")
        fig.suptitle(title)
        return _save(fig, path)


def accuracy_bars(acc: Mapping[str, float], path, title: str = "validation accuracy") -> Path:
    names = list(acc)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        ax.bar(range(len(names)), [100.0 * acc[n] for n in names], color="#4c72b0")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=20, ha="right")
        ax.set_ylabel("accuracy (%)")
        ax.set_title(title)
        return _save(fig, path)


def class_deltas(deltas: Mapping[str, float], path, title: str) -> Path:
    """Per-class accuracy change in percentage points (positive bars are gains)."""
    names = list(deltas)
    values = [100.0 * deltas[n] for n in names]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 0.35 * len(names) + 1.2))
        ax.barh(range(len(names)), values, color=["#55a868" if v >= 0 else "#c44e52" for v in values])
        ax.set_yticks(range(len(names)))
        ax.set_yticklabels(names)
        ax.invert_yaxis()
        ax.axvline(0.0, color="black", lw=0.8)
        ax.set_xlabel("accuracy change (pp)")
        ax.set_title(title)
        return _save(fig, path)


def training_curves(histories: Mapping[str, Sequence[Dict]], path, key: str = "loss",
                    title: Optional[str] = None) -> Path:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for name, epochs in histories.items():
            pts = [(e["epoch"], e[key]) for e in epochs if key in e]
            if pts:
                ax.plot(*zip(*pts), marker=".", label=name)
        ax.set_xlabel("epoch")
        ax.set_ylabel(key.replace("_", " "))
        ax.set_title(title or key.replace("_", " "))
        ax.legend(frameon=False)
        return _save(fig, path)
