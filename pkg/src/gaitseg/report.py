"""Figures written next to the CSV reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_history(history: list[dict], path):
    """Train/validation loss per epoch, best epoch marked."""
    epochs = [h["epoch"] for h in history]
    train = [h["train_loss"] for h in history]
    val = [h["val_loss"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, train, label="train")
    ax.plot(epochs, val, label="validation")
    best = int(np.argmin(val))
    ax.axvline(epochs[best], color="0.6", ls="--", lw=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross entropy")
    ax.legend(frameon=False)
    return _save(fig, path)


def plot_phases(pred: np.ndarray, truth: np.ndarray, rate_hz: float, path, title: str = "", seconds: float = 6.0):
    """True vs predicted phase for the first ``seconds`` of one recording."""
    n = min(len(truth), int(seconds * rate_hz))
    t = np.arange(n) / rate_hz
    fig, ax = plt.subplots(figsize=(7, 2.6))
    ax.step(t, truth[:n], where="post", label="truth", lw=1.6)
    ax.step(t, np.asarray(pred[:n]) * 0.9 + 0.05, where="post", label="predicted", lw=1.0)
    ax.set_yticks([0, 1], ["stance", "swing"])
    ax.set_xlabel("time (s)")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(frameon=False, loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_latency(latencies_ms, path):
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.plot(np.arange(len(latencies_ms)), latencies_ms, marker=".", lw=0.8)
    ax.set_xlabel("window")
    ax.set_ylabel("inference (ms)")
    return _save(fig, path)
