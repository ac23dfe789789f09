"""Label synchronization, windowing, normalization, layout and random downsampling."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .container import read_container, write_container

log = logging.getLogger(__name__)

ACCEL_RANGE_G = 16.0
GYRO_RANGE_DPS = 2000.0
CHANNELS = ("ax", "ay", "az", "gx", "gy", "gz")
SCALE = np.array([ACCEL_RANGE_G] * 3 + [GYRO_RANGE_DPS] * 3)

STANCE, SWING = 0, 1
DATASET_MAGIC = b"GSEGDATA"


class DataFormatError(ValueError):
    """Malformed input file or record."""


@dataclass
class ImuRecording:
    """6-axis stream: ``samples`` is ``(n, 6)`` in g and deg/s, ``t`` in seconds."""

    samples: np.ndarray
    rate_hz: float
    t: np.ndarray | None = None
    subject_id: str = "S1"
    activity: str = "walking"
    speed_kmh: float = 5.0
    strike: str = "RFS"
    rec_id: str = ""

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2 or self.samples.shape[1] != 6:
            raise DataFormatError(f"samples must be (n, 6), got {self.samples.shape}")
        if self.t is None:
            self.t = np.arange(len(self.samples)) / self.rate_hz
        self.t = np.asarray(self.t, dtype=np.float64)
        if not self.rec_id:
            self.rec_id = f"{self.subject_id}_{self.speed_kmh:g}kmh_{self.strike}"

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self) / self.rate_hz

    def metadata(self) -> dict[str, str]:
        return {
            "rec_id": self.rec_id,
            "subject": self.subject_id,
            "activity": self.activity,
            "speed_kmh": f"{self.speed_kmh:g}",
            "strike": self.strike,
            "rate_hz": f"{self.rate_hz:g}",
        }


@dataclass
class PhaseEventList:
    """Phase onsets ``(time_s, phase)``: increasing times, alternating phases, first at t=0."""

    times: np.ndarray
    phases: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.phases = np.asarray(self.phases, dtype=np.int8)
        if len(self.times) != len(self.phases):
            raise DataFormatError("times and phases differ in length")
        if len(self.times):
            if self.times[0] != 0.0:
                raise DataFormatError(f"first event must be at t=0, got {self.times[0]}")
            if np.any(np.diff(self.times) <= 0):
                raise DataFormatError("event times must be strictly increasing")
            if np.any(np.diff(self.phases) == 0):
                raise DataFormatError("consecutive events must alternate phase")
            if not set(np.unique(self.phases)) <= {STANCE, SWING}:
                raise DataFormatError("phases must be 0 (stance) or 1 (swing)")

    def __len__(self):
        return len(self.times)


# ---------------------------------------------------------------------------
# synchronization
# ---------------------------------------------------------------------------

def synchronize_labels(events: PhaseEventList, rate_hz: float, n_samples: int, t: np.ndarray | None = None) -> np.ndarray:
    """Label sample ``i`` with the phase of the latest onset at or before its timestamp.

    Timestamps default to ``i / rate_hz``; pass ``t`` for irregular streams.
    """
    if len(events) == 0:
        raise ValueError("synchronize_labels: empty event list")
    if t is None:
        # i / rate is correctly rounded, so 7 / 20 == 0.35 exactly
        t = np.arange(n_samples) / rate_hz
    idx = np.searchsorted(events.times, t, side="right") - 1
    return events.phases[np.clip(idx, 0, None)].astype(np.int8)


def labels_to_events(labels: np.ndarray, t: np.ndarray) -> PhaseEventList:
    """Inverse of synchronization: onsets at each label change (first at t[0] shifted to 0)."""
    labels = np.asarray(labels)
    change = np.flatnonzero(np.diff(labels)) + 1
    times = np.concatenate([[0.0], t[change] - t[0]])
    return PhaseEventList(times, np.concatenate([[labels[0]], labels[change]]))


# ---------------------------------------------------------------------------
# windowing
# ---------------------------------------------------------------------------

@dataclass
class WindowSet:
    signals: np.ndarray  # (n, 6, window_len), normalized
    labels: np.ndarray  # (n, window_len)
    rec_index: np.ndarray  # (n,) index into rec_ids
    start: np.ndarray  # (n,) start sample in the source recording
    rec_ids: list[str] = field(default_factory=list)
    subjects: list[str] = field(default_factory=list)
    window_len: int = 1000
    stride: int = 1000
    rate_hz: float = 1000.0

    def __len__(self):
        return len(self.signals)

    def subset(self, idx) -> "WindowSet":
        idx = np.asarray(idx, dtype=np.intp)
        return WindowSet(
            self.signals[idx], self.labels[idx], self.rec_index[idx], self.start[idx],
            self.rec_ids, self.subjects, self.window_len, self.stride, self.rate_hz,
        )

    def window_subjects(self) -> np.ndarray:
        return np.array([self.subjects[i] for i in self.rec_index]) if len(self) else np.array([], dtype=str)

    @classmethod
    def concat(cls, sets: Sequence["WindowSet"]) -> "WindowSet":
        sets = [s for s in sets]
        if not sets:
            raise ValueError("nothing to concatenate")
        rec_ids, subjects, rec_index = [], [], []
        for s in sets:
            rec_index.append(s.rec_index + len(rec_ids))
            rec_ids.extend(s.rec_ids)
            subjects.extend(s.subjects)
        first = sets[0]
        return cls(
            np.concatenate([s.signals for s in sets]),
            np.concatenate([s.labels for s in sets]),
            np.concatenate(rec_index),
            np.concatenate([s.start for s in sets]),
            rec_ids, subjects, first.window_len, first.stride, first.rate_hz,
        )


def window_starts(n: int, window_len: int, stride: int) -> np.ndarray:
    if n < window_len:
        return np.zeros(0, dtype=np.int64)
    return np.arange((n - window_len) // stride + 1, dtype=np.int64) * stride


def segment_windows(recording: ImuRecording, labels: np.ndarray, window_len: int, mode: str = "train",
                    normalized: bool = True) -> WindowSet:
    """Cut a recording into windows: half-overlapping for ``train``, disjoint for ``test``."""
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    if mode not in ("train", "test"):
        raise ValueError(f"mode must be 'train' or 'test', got {mode!r}")
    labels = np.asarray(labels)
    if len(labels) != len(recording):
        raise DataFormatError(f"labels ({len(labels)}) and samples ({len(recording)}) differ in length")
    stride = max(window_len // 2, 1) if mode == "train" else window_len
    starts = window_starts(len(recording), window_len, stride)
    sig = normalize(recording.samples.T) if normalized else recording.samples.T
    offs = starts[:, None] + np.arange(window_len)[None, :]
    return WindowSet(
        signals=np.ascontiguousarray(sig[:, offs].transpose(1, 0, 2)).astype(np.float32).reshape(len(starts), 6, window_len),
        labels=labels[offs].astype(np.int8).reshape(len(starts), window_len),
        rec_index=np.zeros(len(starts), dtype=np.int64),
        start=starts,
        rec_ids=[recording.rec_id],
        subjects=[recording.subject_id],
        window_len=window_len,
        stride=stride,
        rate_hz=recording.rate_hz,
    )


# ---------------------------------------------------------------------------
# normalization and layout
# ---------------------------------------------------------------------------

class RangeCounter:
    """Counts samples that fall outside the sensor range during normalization."""

    def __init__(self):
        self.out_of_range = 0


range_warnings = RangeCounter()


def normalize(signals: np.ndarray) -> np.ndarray:
    """Scale ``(6, L)`` rows (or ``(..., 6, L)``) by the sensor full-scale range.

    Out-of-range values are scaled but not clamped; they are tallied in
    ``range_warnings``.
    """
    signals = np.asarray(signals, dtype=np.float64)
    if signals.shape[-2] != 6:
        raise DataFormatError(f"normalize expects 6 sensor rows, got shape {signals.shape}")
    out = signals / SCALE[:, None]
    n_bad = int(np.count_nonzero(np.abs(out) > 1.0))
    if n_bad:
        range_warnings.out_of_range += n_bad
        log.warning("%d sample values outside sensor range", n_bad)
    return out


def arrange_layout(signals: np.ndarray, layout: str) -> np.ndarray:
    """``(..., 6, L)`` -> ``(..., 1, 6, L)`` for spatial, ``(..., 6, 1, L)`` for temporal."""
    signals = np.asarray(signals)
    if signals.ndim < 2 or signals.shape[-2] != 6:
        raise DataFormatError(f"arrange_layout expects 6 sensor rows, got shape {signals.shape}")
    if layout == "spatial":
        return signals[..., None, :, :]
    if layout == "temporal":
        return signals[..., :, None, :]
    raise ValueError(f"unknown layout {layout!r}")


def inverse_layout(tensor: np.ndarray, layout: str) -> np.ndarray:
    if layout == "spatial":
        return tensor[..., 0, :, :]
    if layout == "temporal":
        return tensor[..., :, 0, :]
    raise ValueError(f"unknown layout {layout!r}")


# ---------------------------------------------------------------------------
# random downsampling
# ---------------------------------------------------------------------------

def downsample_indices(n: int, block: int, rng: np.random.Generator) -> np.ndarray:
    n_blocks = n // block
    return np.arange(n_blocks) * block + rng.integers(0, block, size=n_blocks)


def downsample_random(recording: ImuRecording, labels: np.ndarray, target_hz: float = 20, replicas: int = 20,
                      seed: int = 0) -> list[tuple[ImuRecording, np.ndarray]]:
    """Pick one random sample per ``rate/target`` block, independently per replica.

    Trailing samples that do not fill a whole block are dropped.
    """
    ratio = recording.rate_hz / target_hz
    block = int(round(ratio))
    if block < 1 or abs(ratio - block) > 1e-9:
        raise ValueError(f"block size {recording.rate_hz}/{target_hz} is not an integer")
    labels = np.asarray(labels)
    streams = np.random.SeedSequence(seed).spawn(replicas)
    out = []
    for r, ss in enumerate(streams):
        idx = downsample_indices(len(recording), block, np.random.default_rng(ss))
        rec = ImuRecording(
            samples=recording.samples[idx], rate_hz=target_hz, t=recording.t[idx],
            subject_id=recording.subject_id, activity=recording.activity,
            speed_kmh=recording.speed_kmh, strike=recording.strike,
            rec_id=f"{recording.rec_id}_r{r:02d}",
        )
        out.append((rec, labels[idx]))
    return out


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def write_recording(rec: ImuRecording, events: PhaseEventList, directory: str | Path) -> Path:
    """Write ``<rec_id>.imu.csv``, ``<rec_id>.meta`` and ``<rec_id>.labels.csv``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    base = directory / rec.rec_id
    with open(f"{base}.imu.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t",) + CHANNELS)
        for ti, row in zip(rec.t, rec.samples):
            w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])
    with open(f"{base}.meta", "w") as fh:
        for k, v in rec.metadata().items():
            fh.write(f"{k}={v}\n")
    with open(f"{base}.labels.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("t", "phase"))
        for ti, ph in zip(events.times, events.phases):
            w.writerow([repr(float(ti)), int(ph)])
    return base


def read_kv(path: str | Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DataFormatError(f"{path}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def read_imu_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ("t",) + CHANNELS:
            raise DataFormatError(f"{path}: header must be t,{','.join(CHANNELS)}, got {header}")
        try:
            rows = np.array([[float(v) for v in row] for row in reader if row], dtype=np.float64)
        except ValueError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    if rows.size == 0:
        return np.zeros(0), np.zeros((0, 6))
    if rows.shape[1] != 7:
        raise DataFormatError(f"{path}: expected 7 columns, got {rows.shape[1]}")
    return rows[:, 0], rows[:, 1:]


def read_label_csv(path: str | Path) -> PhaseEventList:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != ("t", "phase"):
            raise DataFormatError(f"{path}: header must be t,phase, got {header}")
        times, phases = [], []
        for row in reader:
            if not row:
                continue
            try:
                times.append(float(row[0]))
                phases.append(int(row[1]))
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}: bad row {row}") from exc
    return PhaseEventList(times, phases)


def read_recording(base: str | Path) -> tuple[ImuRecording, PhaseEventList]:
    """Load the three files sharing prefix ``base`` (without suffix)."""
    base = str(base)
    meta = read_kv(f"{base}.meta")
    t, samples = read_imu_csv(f"{base}.imu.csv")
    try:
        rec = ImuRecording(
            samples=samples.reshape(-1, 6), rate_hz=float(meta["rate_hz"]), t=t,
            subject_id=meta["subject"], activity=meta["activity"],
            speed_kmh=float(meta["speed_kmh"]), strike=meta["strike"],
            rec_id=meta.get("rec_id", Path(base).name),
        )
    except KeyError as exc:
        raise DataFormatError(f"{base}.meta: missing key {exc}") from exc
    return rec, read_label_csv(f"{base}.labels.csv")


def list_recordings(directory: str | Path) -> list[Path]:
    directory = Path(directory)
    return sorted(p.with_name(p.name[: -len(".imu.csv")]) for p in directory.glob("*.imu.csv"))


@dataclass
class Dataset:
    """Windowed corpus: overlapping ``train`` windows and disjoint ``test`` windows."""

    train: WindowSet
    test: WindowSet
    layout: str = "spatial"

    @property
    def rate_hz(self) -> float:
        return self.train.rate_hz

    @property
    def window_len(self) -> int:
        return self.train.window_len

    @property
    def subjects(self) -> list[str]:
        return sorted(set(self.train.subjects) | set(self.test.subjects))


def build_dataset(pairs: Sequence[tuple[ImuRecording, np.ndarray]], window_len: int, layout: str = "spatial") -> Dataset:
    train = WindowSet.concat([segment_windows(r, lab, window_len, "train") for r, lab in pairs])
    test = WindowSet.concat([segment_windows(r, lab, window_len, "test") for r, lab in pairs])
    return Dataset(train, test, layout)


def preprocess_recordings(recs: Sequence[tuple[ImuRecording, PhaseEventList]], rate_hz: float, layout: str = "spatial",
                          replicas: int = 20, seed: int = 0) -> Dataset:
    """Full pipeline: synchronize, optionally downsample, window, normalize."""
    pairs = []
    for i, (rec, events) in enumerate(recs):
        labels = synchronize_labels(events, rec.rate_hz, len(rec), rec.t)
        if rate_hz == rec.rate_hz:
            pairs.append((rec, labels))
        else:
            pairs.extend(downsample_random(rec, labels, rate_hz, replicas, seed=seed * 100003 + i))
    window_len = int(round(rate_hz))  # one second
    return build_dataset(pairs, window_len, layout)


def _windowset_arrays(prefix: str, ws: WindowSet) -> list[tuple[str, np.ndarray]]:
    return [
        (f"{prefix}.signals", ws.signals.astype(np.float32)),
        (f"{prefix}.labels", ws.labels.astype(np.int8)),
        (f"{prefix}.rec_index", ws.rec_index.astype(np.int64)),
        (f"{prefix}.start", ws.start.astype(np.int64)),
    ]


def save_dataset(ds: Dataset, path: str | Path):
    header = {
        "layout": ds.layout,
        "rate_hz": f"{ds.rate_hz:g}",
        "window_len": str(ds.window_len),
        "train.stride": str(ds.train.stride),
        "test.stride": str(ds.test.stride),
        "train.rec_ids": ",".join(ds.train.rec_ids),
        "train.subjects": ",".join(ds.train.subjects),
        "test.rec_ids": ",".join(ds.test.rec_ids),
        "test.subjects": ",".join(ds.test.subjects),
    }
    arrays = _windowset_arrays("train", ds.train) + _windowset_arrays("test", ds.test)
    write_container(path, DATASET_MAGIC, header, arrays)


def load_dataset(path: str | Path) -> Dataset:
    header, arrays = read_container(path, DATASET_MAGIC)
    rate = float(header["rate_hz"])
    wl = int(header["window_len"])

    def ws(prefix):
        ids = header[f"{prefix}.rec_ids"].split(",") if header[f"{prefix}.rec_ids"] else []
        subs = header[f"{prefix}.subjects"].split(",") if header[f"{prefix}.subjects"] else []
        return WindowSet(
            arrays[f"{prefix}.signals"], arrays[f"{prefix}.labels"], arrays[f"{prefix}.rec_index"],
            arrays[f"{prefix}.start"], ids, subs, wl, int(header[f"{prefix}.stride"]), rate,
        )

    return Dataset(ws("train"), ws("test"), header["layout"])
