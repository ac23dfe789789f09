"""Checkpoint I/O and the real-time 20 Hz streaming segmenter."""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .container import ContainerError, read_container, write_container
from .datapipe import SCALE, STANCE, arrange_layout
from .model import Network, NetworkSpec

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"GSEGCKPT"
STREAM_RATE_HZ = 20
STREAM_POOL_K = 2


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _layer_order_arrays(net: Network):
    for lname, layer in net.named_layers():
        for pname, arr in layer.params.items():
            yield f"{lname}.{pname}", arr
        for bname, arr in layer.buffers.items():
            yield f"{lname}.{bname}", arr


def save_checkpoint(net: Network, path: str | Path, extra: dict[str, str] | None = None):
    header = {f"spec.{k}": v for k, v in (line.split("=", 1) for line in net.spec.to_text().splitlines())}
    header["dtype"] = net.dtype.str
    for k, v in (extra or {}).items():
        header[f"meta.{k}"] = str(v)
    write_container(path, CHECKPOINT_MAGIC, header, _layer_order_arrays(net))


def load_checkpoint(path: str | Path) -> Network:
    header, arrays = read_container(path, CHECKPOINT_MAGIC)
    spec_text = "".join(f"{k[5:]}={v}\n" for k, v in header.items() if k.startswith("spec."))
    try:
        spec = NetworkSpec.from_text(spec_text)
    except (KeyError, ValueError) as exc:
        raise ContainerError(f"{path}: bad network spec in header: {exc}") from exc
    net = Network(spec, dtype=np.dtype(header.get("dtype", "<f4")))
    net.load_state_dict(arrays)
    return net


def checkpoint_meta(path: str | Path) -> dict[str, str]:
    header, _ = read_container(path, CHECKPOINT_MAGIC)
    return {k[5:]: v for k, v in header.items() if k.startswith("meta.")}


# ---------------------------------------------------------------------------
# streaming
# ---------------------------------------------------------------------------

@dataclass
class GaitEvent:
    kind: str  # "stance_onset" | "swing_onset"
    time_s: float
    source_window: int


@dataclass
class LatencyStats:
    samples_ms: list[float] = field(default_factory=list)

    def add(self, ms: float):
        self.samples_ms.append(ms)

    @property
    def min(self) -> float:
        return min(self.samples_ms) if self.samples_ms else float("nan")

    @property
    def max(self) -> float:
        return max(self.samples_ms) if self.samples_ms else float("nan")

    @property
    def mean(self) -> float:
        return float(np.mean(self.samples_ms)) if self.samples_ms else float("nan")


class StreamState:
    """Ring-buffered sample ingestion plus per-window inference.

    Every ``window_len`` pushed samples trigger one inference over the most
    recent window; windows never overlap.
    """

    def __init__(self, net: Network | None, rate_hz: float = STREAM_RATE_HZ, window_len: int | None = None):
        self.rate_hz = rate_hz
        self.window_len = window_len or int(round(rate_hz))
        if net is not None:
            check_stream_model(net, self.window_len)
        self.net = net
        self.capacity = self.window_len
        self.buffer = np.zeros((self.capacity, 6), dtype=np.float32)
        self.times = np.zeros(self.capacity)
        self.sample_count = 0
        self.last_t = -np.inf
        self.windows_done = 0
        self.initial_phase: int | None = None
        self.last_phase: int | None = None
        self.events: list[GaitEvent] = []
        self.phases: list[np.ndarray] = []
        self.phase_times: list[np.ndarray] = []
        self.latency = LatencyStats()

    def push_sample(self, sample, t_s: float) -> bool:
        """Buffer one raw 6-axis sample; returns True when a window is ready."""
        if t_s < self.last_t:
            raise ValueError(f"timestamp went backwards: {t_s} < {self.last_t}")
        self.last_t = t_s
        pos = self.sample_count % self.capacity
        self.buffer[pos] = np.asarray(sample, dtype=np.float64) / SCALE
        self.times[pos] = t_s
        self.sample_count += 1
        return self.sample_count % self.window_len == 0

    def take_window(self) -> tuple[np.ndarray, np.ndarray, int]:
        """Most recent ``window_len`` samples as ``(6, L)`` plus their times and the window index."""
        if self.sample_count < self.window_len:
            raise RuntimeError("buffer not yet full")
        end = self.sample_count % self.capacity
        order = (np.arange(self.window_len) + end - self.window_len) % self.capacity
        index = self.sample_count // self.window_len - 1
        return self.buffer[order].T.copy(), self.times[order].copy(), index

    def infer(self, window: np.ndarray, times: np.ndarray, index: int) -> tuple[np.ndarray, float]:
        if self.net is None:
            raise RuntimeError("no model loaded")
        x = arrange_layout(window, self.net.spec.layout)[None]
        t0 = time.perf_counter()
        logits = self.net.forward(x, training=False)
        ms = (time.perf_counter() - t0) * 1000.0
        phases = logits[0, :, 0, :].argmax(axis=0).astype(np.int8)
        self.latency.add(ms)
        self._emit(phases, times, index)
        self.windows_done += 1
        return phases, ms

    def _emit(self, phases: np.ndarray, times: np.ndarray, index: int):
        if self.initial_phase is None:
            self.initial_phase = int(phases[0])
            self.last_phase = int(phases[0])
        for p, t in zip(phases, times):
            p = int(p)
            if p != self.last_phase:
                kind = "stance_onset" if p == STANCE else "swing_onset"
                self.events.append(GaitEvent(kind, float(t), index))
                self.last_phase = p
        self.phases.append(phases)
        self.phase_times.append(times)

    def labels(self) -> np.ndarray:
        return np.concatenate(self.phases) if self.phases else np.zeros(0, dtype=np.int8)


def infer_window(state: StreamState) -> tuple[np.ndarray, float]:
    return state.infer(*state.take_window())


def check_stream_model(net: Network, window_len: int = STREAM_RATE_HZ):
    spec = net.spec
    if spec.pool_k != STREAM_POOL_K:
        raise ValueError(
            f"streaming runs the 20 Hz model (pool_k={STREAM_POOL_K}); checkpoint has pool_k={spec.pool_k}"
        )
    if spec.window_len != window_len:
        raise ValueError(f"checkpoint window_len={spec.window_len} does not match stream window {window_len}")


def run_stream(net: Network, rows: Iterable[tuple[float, np.ndarray]], threaded: bool = False,
               queue_size: int = 4) -> StreamState:
    """Feed ``(t, sample)`` rows through a :class:`StreamState`.

    In threaded mode ingestion and inference run as a two-stage pipeline
    over a bounded queue; outputs are identical to the single-threaded path.
    """
    state = StreamState(net, rate_hz=STREAM_RATE_HZ, window_len=net.spec.window_len)
    if not threaded:
        for t, sample in rows:
            if state.push_sample(sample, t):
                infer_window(state)
        return state

    handoff: queue.Queue = queue.Queue(maxsize=queue_size)
    period = state.window_len / state.rate_hz
    errors: list[BaseException] = []
    overruns = 0

    def worker():
        while True:
            item = handoff.get()
            if item is None:
                return
            if errors:
                continue  # keep draining so the producer never blocks
            try:
                state.infer(*item)
            except BaseException as exc:  # surfaced to the caller after join
                errors.append(exc)

    th = threading.Thread(target=worker, name="gaitseg-infer", daemon=True)
    th.start()
    try:
        for t, sample in rows:
            if errors:
                break
            if state.push_sample(sample, t):
                item = state.take_window()
                try:
                    handoff.put(item, timeout=period)
                except queue.Full:
                    overruns += 1
                    handoff.put(item)
    finally:
        handoff.put(None)
        th.join()
    if overruns:
        log.warning("inference fell behind ingestion %d times", overruns)
    if errors:
        raise errors[0]
    return state


def batch_labels(net: Network, signals: np.ndarray) -> np.ndarray:
    """Per-sample phases for normalized ``(n, 6, L)`` windows in one batched forward."""
    x = arrange_layout(signals, net.spec.layout)
    logits = net.forward(x, training=False)
    return logits[:, :, 0, :].argmax(axis=1).astype(np.int8)
