"""Figure rendering for evaluation reports and training logs.

All entry points write PNG files next to the delimited report output;
nothing here opens a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import Report
from .signal_io import Waveform
from .training import TrainHistory

METRIC_NAMES = ("SNR (dB)", "SegSNR (dB)", "SISNRi (dB)")


def save_metrics_figure(report: Report, path) -> None:
    """Grouped bars of the three metrics, one group per report row."""
    rows = report.rows
    labels = [f"{r.pair}\n{r.label}" for r in rows]
    values = np.array([[r.snr_db, r.segsnr_db, r.sisnri_db] for r in rows])
    x = np.arange(len(rows))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(rows)), 4.0))
    for j, name in enumerate(METRIC_NAMES):
        ax.bar(x + (j - 1) * width, values[:, j], width, label=name)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=7)
    ax.set_ylabel("dB")
    ax.set_title("Separation metrics")
    ax.legend(fontsize=8)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_waveform_figure(mixture: Waveform, references, estimates, path) -> None:
    """Time-domain comparison grid: reference sources on top, separated
    estimates below them, absolute difference at the bottom."""
    n = len(references)
    t = np.arange(len(mixture)) / mixture.sample_rate
    fig, axes = plt.subplots(3, n, figsize=(5.0 * n, 6.0), sharex=True)
    axes = np.atleast_2d(axes)
    for i in range(n):
        ref, est = references[i], estimates[i]
        axes[0, i].plot(t, ref.samples, lw=0.4)
        axes[0, i].set_title(f"reference {ref.label or i}", fontsize=9)
        axes[1, i].plot(t, est.samples, lw=0.4, color="tab:orange")
        axes[1, i].set_title("separated", fontsize=9)
        axes[2, i].plot(t, np.abs(ref.samples - est.samples), lw=0.4, color="tab:red")
        axes[2, i].set_title("abs difference", fontsize=9)
        axes[2, i].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_loss_figure(history: TrainHistory, path) -> None:
    """Train/validation loss per epoch with the lr in effect."""
    epochs = [r.epoch for r in history.records]
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(epochs, history.train_losses, marker="o", ms=3, label="train loss")
    ax.plot(epochs, history.val_losses, marker="s", ms=3, label="val loss")
    reductions = [r.epoch for r in history.records if r.lr != history.records[0].lr]
    if reductions:
        ax.axvline(reductions[0], color="gray", ls="--", lw=0.8, label="lr reduced")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss (-SI-SNR, dB)")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
