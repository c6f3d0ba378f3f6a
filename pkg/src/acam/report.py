"""Render training and evaluation artifacts as figures.

Figures are written next to the delimited outputs so a run directory is
self-describing: a loss-curve plot beside the loss log, and a metric bar
chart beside the metrics table.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluation import EvalReport
from .training import EpochStats


def save_loss_figure(log: Sequence[EpochStats], path: str | Path) -> Path:
    """Total loss and its components per epoch."""
    path = Path(path)
    epochs = [row.epoch for row in log]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [r.loss_total for r in log], marker="o", label="total")
    ax.plot(epochs, [r.loss_bce for r in log], marker="s", label="cross-entropy")
    if any(r.loss_kge > 0 for r in log):
        ax.plot(epochs, [r.loss_kge for r in log], marker="^",
                label="kg energy (unweighted)")
    if any(r.loss_l2 > 0 for r in log):
        ax.plot(epochs, [r.loss_l2 for r in log], marker="v",
                label="L2 (unweighted)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_metrics_figure(report: EvalReport, path: str | Path) -> Path:
    """Bar chart of HR@n / nDCG@n / RR with repetition error bars."""
    path = Path(path)
    labels, values, errors = [], [], []
    for row in report.rows:
        labels.append(row.metric if row.n is None else f"{row.metric}@{row.n}")
        values.append(row.value)
        errors.append(row.stderr)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    positions = range(len(labels))
    ax.bar(positions, values, yerr=errors, capsize=3, color="#4878b0")
    ax.set_xticks(list(positions))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("score")
    ax.set_title(f"ranking metrics ({report.users_evaluated} users, "
                 f"{report.repetitions} repetitions)")
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
