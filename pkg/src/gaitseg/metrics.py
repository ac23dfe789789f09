"""Per-sample gait phase metrics: phase accuracy, phase-duration error, stride detection."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

STANCE, SWING = 0, 1


@dataclass(frozen=True)
class GaitSegment:
    phase: int
    start: int
    length: int


@dataclass
class GaitMetrics:
    swing_error_ms: float
    swing_error_std_ms: float
    stance_error_ms: float
    stance_error_std_ms: float
    phase_accuracy_pct: float
    stride_accuracy_pct: float
    n_strides: int
    n_samples: int

    def table(self) -> str:
        rows = [
            ("Swing(ms)", f"{self.swing_error_ms:.2f}±{self.swing_error_std_ms:.2f}"),
            ("Stance(ms)", f"{self.stance_error_ms:.2f}±{self.stance_error_std_ms:.2f}"),
            ("Gait phase accuracy(%)", f"{self.phase_accuracy_pct:.2f}"),
            ("Stride accuracy(%)", f"{self.stride_accuracy_pct:.2f}"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {val}" for name, val in rows)

    def write_csv(self, path: str | Path):
        d = asdict(self)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "value"])
            for k, v in d.items():
                w.writerow([k, v])


def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction length {pred.shape} != truth length {truth.shape}")
    return pred, truth


def per_sample_accuracy(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    if pred.size == 0:
        raise ValueError("empty label sequences")
    return 100.0 * float(np.count_nonzero(pred == truth)) / pred.size


def extract_segments(labels) -> list[GaitSegment]:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("extract_segments: empty sequence")
    starts = np.concatenate([[0], np.flatnonzero(np.diff(labels)) + 1])
    ends = np.concatenate([starts[1:], [labels.size]])
    return [GaitSegment(int(labels[s]), int(s), int(e - s)) for s, e in zip(starts, ends)]


def segments_to_labels(segments: Sequence[GaitSegment]) -> np.ndarray:
    return np.concatenate([np.full(s.length, s.phase, dtype=np.int8) for s in segments])


def duration_errors(pred_segments: Sequence[GaitSegment], true_segments: Sequence[GaitSegment],
                    rate_hz: float) -> dict[int, list[float]]:
    """Per-phase duration errors (ms) of interior true segments.

    Each true segment is matched to the same-phase predicted segment with the
    largest sample overlap (earliest on ties).  Unmatched segments count
    their full duration as the error.
    """
    ms = 1000.0 / rate_hz
    out: dict[int, list[float]] = {STANCE: [], SWING: []}
    preds = list(pred_segments)
    p_start = np.array([p.start for p in preds])
    p_end = p_start + np.array([p.length for p in preds])
    p_phase = np.array([p.phase for p in preds])
    for seg in true_segments[1:-1]:
        s, e = seg.start, seg.start + seg.length
        overlap = np.minimum(p_end, e) - np.maximum(p_start, s)
        overlap = np.where(p_phase == seg.phase, overlap, 0)
        j = int(np.argmax(overlap)) if overlap.size else 0
        if overlap.size and overlap[j] > 0:
            out[seg.phase].append(abs(seg.length - preds[j].length) * ms)
        else:
            out[seg.phase].append(seg.length * ms)
    return out


def _mean_std(values: Sequence[float]) -> tuple[float, float]:
    if not len(values):
        return 0.0, 0.0
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std())


def phase_time_error(pred_segments, true_segments, rate_hz: float):
    """``((swing_mean, swing_std), (stance_mean, stance_std))`` in ms, population std.

    A phase with no interior true segment reports ``(0.0, 0.0)``.
    """
    errs = duration_errors(pred_segments, true_segments, rate_hz)
    return _mean_std(errs[SWING]), _mean_std(errs[STANCE])


def stance_onsets(labels) -> np.ndarray:
    """Indices where swing turns into stance (index 0 never counts)."""
    labels = np.asarray(labels)
    return np.flatnonzero((labels[1:] == STANCE) & (labels[:-1] == SWING)) + 1


def stride_counts(pred, truth, rate_hz: float, tol_ms: float = 50.0) -> tuple[int, int]:
    """``(detected, total)`` strides.

    A stride spans consecutive true stance onsets; it is detected when the
    prediction has exactly one stance onset within ``tol_ms`` of the onset
    that opens it.
    """
    pred, truth = _pair(pred, truth)
    t_on = stance_onsets(truth)
    p_on = stance_onsets(pred)
    total = max(len(t_on) - 1, 0)
    if total == 0:
        return 0, 0
    tol = tol_ms * rate_hz / 1000.0
    opening = t_on[:-1]
    lo = np.searchsorted(p_on, opening - tol - 1e-9, side="left")
    hi = np.searchsorted(p_on, opening + tol + 1e-9, side="right")
    return int(np.count_nonzero(hi - lo == 1)), total


def stride_detection_accuracy(pred, truth, rate_hz: float, tol_ms: float = 50.0) -> float:
    """Percent of true strides detected; ``nan`` when the truth holds no complete stride."""
    detected, total = stride_counts(pred, truth, rate_hz, tol_ms)
    return 100.0 * detected / total if total else float("nan")


def evaluate_sequences(pairs: Iterable[tuple[np.ndarray, np.ndarray]], rate_hz: float, tol_ms: float = 50.0) -> GaitMetrics:
    """Pool all four metrics over several ``(pred, truth)`` recordings."""
    matched = samples = detected = strides = 0
    errs = {STANCE: [], SWING: []}
    for pred, truth in pairs:
        pred, truth = _pair(pred, truth)
        if pred.size == 0:
            continue
        matched += int(np.count_nonzero(pred == truth))
        samples += pred.size
        d, s = stride_counts(pred, truth, rate_hz, tol_ms)
        detected += d
        strides += s
        e = duration_errors(extract_segments(pred), extract_segments(truth), rate_hz)
        errs[STANCE].extend(e[STANCE])
        errs[SWING].extend(e[SWING])
    sw = _mean_std(errs[SWING])
    st = _mean_std(errs[STANCE])
    return GaitMetrics(
        swing_error_ms=sw[0], swing_error_std_ms=sw[1],
        stance_error_ms=st[0], stance_error_std_ms=st[1],
        phase_accuracy_pct=100.0 * matched / samples if samples else float("nan"),
        stride_accuracy_pct=100.0 * detected / strides if strides else float("nan"),
        n_strides=strides, n_samples=samples,
    )
