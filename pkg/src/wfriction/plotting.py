"""Matplotlib figures for run reports. Files only; never opens a window."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def final_accuracy_bars(path, methods: dict[str, list[float]], task_names: list[str], title: str = ""):
    """Grouped bars: accuracy on every task after the last task, one group per task."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    n = len(methods)
    width = 0.8 / max(n, 1)
    x = np.arange(len(task_names))
    for k, (m, row) in enumerate(methods.items()):
        ax.bar(x + (k - (n - 1) / 2) * width, row, width, label=m)
    ax.set_xticks(x, task_names, rotation=20 if len(task_names) > 3 else 0)
    ax.set_ylim(0, 1)
    ax.set_ylabel("test accuracy after last task")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100)
    plt.close(fig)


def average_accuracy_curve(path, methods: dict[str, list[float]], title: str = ""):
    """Average accuracy over tasks seen so far, after each task."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for m, curve in methods.items():
        ax.plot(np.arange(1, len(curve) + 1), curve, marker="o", label=m)
    ax.set_xlabel("tasks trained")
    ax.set_ylabel("average accuracy")
    ax.set_ylim(0, 1)
    ax.set_xticks(np.arange(1, max(len(c) for c in methods.values()) + 1))
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100)
    plt.close(fig)


def relative_cost_bars(path, rel_time: dict[str, float], rel_memory: dict[str, float], title: str = ""):
    methods = list(rel_time)
    x = np.arange(len(methods))
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(x - 0.2, [rel_time[m] for m in methods], 0.4, label="time")
    ax.bar(x + 0.2, [rel_memory[m] for m in methods], 0.4, label="memory")
    ax.set_xticks(x, methods)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("relative to costliest method")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=100)
    plt.close(fig)
