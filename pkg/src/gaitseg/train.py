"""Subject-wise folds, mini-batch Adam training with best-validation checkpointing, evaluation."""

from __future__ import annotations

import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datapipe import Dataset, WindowSet, arrange_layout, read_kv
from .kernel import AdamState, adam_step, softmax_cross_entropy
from .metrics import GaitMetrics, evaluate_sequences
from .model import Network

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 100
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    val_fraction: float = 0.10
    seed: int = 0
    folds: int = 3

    def __post_init__(self):
        if not 0 < self.val_fraction < 1:
            raise ValueError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @classmethod
    def from_mapping(cls, kv: dict[str, str], **overrides) -> "TrainConfig":
        """Build from flat ``key=value`` pairs; an optional ``train.`` prefix is stripped."""
        types = {f.name: f.type for f in dataclasses.fields(cls)}
        values = {}
        for key, raw in kv.items():
            name = key[len("train."):] if key.startswith("train.") else key
            if name not in types:
                raise KeyError(f"unknown config key {key!r}")
            values[name] = int(raw) if types[name] in (int, "int") else float(raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "TrainConfig":
        return cls.from_mapping(read_kv(path), **overrides)


@dataclass
class Fold:
    test_subjects: list[str]
    train_subjects: list[str]
    train_idx: np.ndarray  # into dataset.train
    val_idx: np.ndarray  # into dataset.train
    test_idx: np.ndarray  # into dataset.test


@dataclass
class FoldPlan:
    folds: list[Fold] = field(default_factory=list)

    def __len__(self):
        return len(self.folds)

    def __getitem__(self, i) -> Fold:
        return self.folds[i]


def make_folds(dataset: Dataset, k: int = 3, val_fraction: float = 0.10, seed: int = 0) -> FoldPlan:
    """Subject-independent folds; subjects are dealt round-robin into ``k`` test groups.

    With three subjects this is leave-one-subject-out.  Validation windows are
    a seeded random ``val_fraction`` of each fold's training windows.
    """
    subjects = dataset.subjects
    if len(subjects) < k:
        raise ValueError(f"need at least {k} subjects for {k} folds, have {len(subjects)}: {subjects}")
    groups = [subjects[i::k] for i in range(k)]
    train_subj = dataset.train.window_subjects()
    test_subj = dataset.test.window_subjects()
    rng = np.random.default_rng(seed)
    plan = FoldPlan()
    for test_group in groups:
        train_group = [s for s in subjects if s not in test_group]
        pool = np.flatnonzero(np.isin(train_subj, train_group))
        perm = rng.permutation(pool)
        n_val = int(round(val_fraction * len(pool)))
        plan.folds.append(Fold(
            test_subjects=list(test_group),
            train_subjects=train_group,
            train_idx=np.sort(perm[n_val:]),
            val_idx=np.sort(perm[:n_val]),
            test_idx=np.flatnonzero(np.isin(test_subj, test_group)),
        ))
    return plan


def network_inputs(net: Network, windows: WindowSet) -> np.ndarray:
    return arrange_layout(windows.signals, net.spec.layout)


def batch_loss(net: Network, x: np.ndarray, y: np.ndarray, batch_size: int = 256) -> float:
    """Mean eval-mode cross entropy over all samples of ``x``."""
    total = 0.0
    for i in range(0, len(x), batch_size):
        logits = net.forward(x[i:i + batch_size], training=False)
        loss, _ = softmax_cross_entropy(logits, y[i:i + batch_size].astype(np.int64))
        total += loss * len(logits)
    return total / len(x)


def train_step(net: Network, xb: np.ndarray, yb: np.ndarray, opt: AdamState) -> float:
    logits = net.forward(xb, training=True)
    loss, dlogits = softmax_cross_entropy(logits, yb.astype(np.int64))
    if not math.isfinite(loss):
        raise NumericError(f"non-finite training loss {loss}")
    net.backward(dlogits)
    pg = net.params_and_grads()
    adam_step([p for p, _ in pg], [g for _, g in pg], opt)
    return loss


def split_validation(windows: WindowSet, val_fraction: float, seed: int) -> tuple[WindowSet, WindowSet]:
    perm = np.random.default_rng(seed).permutation(len(windows))
    n_val = max(1, int(round(val_fraction * len(windows))))
    return windows.subset(np.sort(perm[n_val:])), windows.subset(np.sort(perm[:n_val]))


def train_model(net: Network, windows: WindowSet, cfg: TrainConfig, val: WindowSet | None = None,
                progress=None) -> tuple[Network, list[dict]]:
    """Train ``net`` in place, then restore the parameters of the lowest validation loss.

    Without ``val``, a seeded ``cfg.val_fraction`` of ``windows`` is held out.
    Returns the network (holding the best parameters) and per-epoch history.
    """
    if len(windows) == 0:
        raise ValueError("empty training set")
    if val is None:
        windows, val = split_validation(windows, cfg.val_fraction, cfg.seed)
    x = network_inputs(net, windows)
    y = windows.labels
    xv = network_inputs(net, val)
    yv = val.labels
    opt = AdamState(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
    rng = np.random.default_rng(cfg.seed)
    history = []
    best_loss = math.inf
    best_state = net.state_dict()
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(x))
        losses = []
        for i in range(0, len(order), cfg.batch_size):
            idx = order[i:i + cfg.batch_size]
            losses.append(train_step(net, x[idx], y[idx], opt) * len(idx))
        train_loss = float(sum(losses) / len(x))
        val_loss = batch_loss(net, xv, yv) if len(xv) else train_loss
        if not math.isfinite(val_loss):
            raise NumericError(f"non-finite validation loss at epoch {epoch}")
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = net.state_dict()
        rec = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
               "seconds": time.perf_counter() - t0}
        history.append(rec)
        log.info("epoch %d train %.5f val %.5f (%.1fs)", epoch, train_loss, val_loss, rec["seconds"])
        if progress is not None:
            progress(rec)
    net.load_state_dict(best_state)
    return net, history


def write_history(history: list[dict], path: str | Path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["val_loss"])])


def predict_windows(net: Network, windows: WindowSet, batch_size: int = 256) -> np.ndarray:
    """Argmax phase per sample, ``(n, window_len)``."""
    x = network_inputs(net, windows)
    out = np.empty((len(x), windows.window_len), dtype=np.int8)
    for i in range(0, len(x), batch_size):
        logits = net.forward(x[i:i + batch_size], training=False)
        out[i:i + batch_size] = logits[:, :, 0, :].argmax(axis=1)
    return out


def recording_sequences(windows: WindowSet, pred: np.ndarray) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Concatenate window predictions and labels per recording, ordered by window start."""
    out = {}
    for r in np.unique(windows.rec_index):
        sel = np.flatnonzero(windows.rec_index == r)
        sel = sel[np.argsort(windows.start[sel], kind="stable")]
        out[windows.rec_ids[r]] = (pred[sel].reshape(-1), windows.labels[sel].reshape(-1))
    return out


def evaluate_model(net: Network, windows: WindowSet, rate_hz: float | None = None, tol_ms: float = 50.0) -> GaitMetrics:
    rate = rate_hz or windows.rate_hz
    seqs = recording_sequences(windows, predict_windows(net, windows))
    return evaluate_sequences(seqs.values(), rate, tol_ms)


def seconds_per_batch(net: Network, windows: WindowSet, batch_size: int, n_batches: int, seed: int = 0) -> float:
    """Wall-clock seconds of one training step, averaged over ``n_batches`` steps."""
    x = network_inputs(net, windows)
    y = windows.labels
    rng = np.random.default_rng(seed)
    opt = AdamState()
    t0 = time.perf_counter()
    for _ in range(n_batches):
        idx = rng.choice(len(x), size=min(batch_size, len(x)), replace=False)
        train_step(net, x[idx], y[idx], opt)
    return (time.perf_counter() - t0) / n_batches
