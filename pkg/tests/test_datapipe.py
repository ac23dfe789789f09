import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitseg import datapipe as D
from gaitseg.container import ContainerError


def events(*pairs):
    return D.PhaseEventList([p[0] for p in pairs], [p[1] for p in pairs])


def rec(n, rate=1000.0, **kw):
    return D.ImuRecording(np.zeros((n, 6)), rate, **kw)


# ---------------------------------------------------------------------------
# synchronization
# ---------------------------------------------------------------------------

def test_sync_single_phase():
    np.testing.assert_array_equal(D.synchronize_labels(events((0.0, 0)), 20, 20), np.zeros(20))


def test_sync_boundary_rule():
    lab = D.synchronize_labels(events((0.0, 0), (0.35, 1), (0.80, 0)), 20, 20)
    expected = np.array([0] * 7 + [1] * 9 + [0] * 4)
    np.testing.assert_array_equal(lab, expected)
    assert set(np.unique(lab)) <= {0, 1}


def test_sync_empty_events():
    with pytest.raises(ValueError):
        D.synchronize_labels(D.PhaseEventList([], []), 20, 5)


def test_event_list_validation():
    with pytest.raises(D.DataFormatError):
        events((0.0, 0), (0.5, 0))
    with pytest.raises(D.DataFormatError):
        events((0.1, 0))
    with pytest.raises(D.DataFormatError):
        events((0.0, 0), (0.0, 1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.01, 0.6), min_size=1, max_size=12), st.integers(0, 1))
def test_sync_idempotent_and_ordered(durations, first):
    times = np.concatenate([[0.0], np.cumsum(durations)[:-1]])
    phases = [(first + i) % 2 for i in range(len(times))]
    ev = D.PhaseEventList(times, phases)
    n = 200
    lab = D.synchronize_labels(ev, 100, n)
    again = D.synchronize_labels(D.labels_to_events(lab, np.arange(n) / 100), 100, n)
    np.testing.assert_array_equal(lab, again)
    # runs of the label stream follow the event phase order
    run_phases = lab[np.concatenate([[0], np.flatnonzero(np.diff(lab)) + 1])]
    assert np.all(np.diff(run_phases) != 0)
    assert run_phases[0] == first


# ---------------------------------------------------------------------------
# windows
# ---------------------------------------------------------------------------

def test_window_counts():
    r = rec(2500)
    lab = np.zeros(2500, dtype=np.int8)
    tr = D.segment_windows(r, lab, 1000, "train")
    assert list(tr.start) == [0, 500, 1000, 1500]
    assert len(D.segment_windows(r, lab, 1000, "test")) == 2
    assert len(D.segment_windows(rec(999), lab[:999], 1000, "train")) == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 5000), st.integers(2, 1200), st.sampled_from(["train", "test"]))
def test_window_formula(n, window_len, mode):
    starts = D.window_starts(n, window_len, window_len // 2 if mode == "train" else window_len)
    stride = window_len // 2 if mode == "train" else window_len
    expected = (n - window_len) // stride + 1 if n >= window_len else 0
    assert len(starts) == expected
    assert np.all(starts + window_len <= n)


def test_window_provenance_maps_back():
    rng = np.random.default_rng(0)
    samples = rng.normal(size=(730, 6))
    r = D.ImuRecording(samples, 100.0, rec_id="x")
    lab = rng.integers(0, 2, size=730)
    ws = D.segment_windows(r, lab, 100, "train", normalized=False)
    for i in range(len(ws)):
        s = ws.start[i]
        np.testing.assert_array_equal(ws.signals[i], samples[s:s + 100].T.astype(np.float32))
        np.testing.assert_array_equal(ws.labels[i], lab[s:s + 100])


def test_overlap_ratio_asymptote():
    # windowed seconds / source seconds -> 2 - window/N for long recordings
    for n in (10_000, 100_000, 1_000_000):
        windowed = len(D.window_starts(n, 1000, 500)) * 1000
        assert windowed / n == pytest.approx(2 - 1000 / n, abs=500 / n)
    assert abs(len(D.window_starts(10**7, 1000, 500)) * 1000 / 10**7 - 2) < 1e-3


def test_overlap_ratio_on_synthetic_corpus():
    from gaitseg.synth import synth_dataset

    recs = synth_dataset(duration_s=1593.0 / 42, seed=0)
    total_src = sum(r.duration_s for r, _ in recs)
    total_win = 0.0
    expected = 0.0
    for r, e in recs:
        lab = D.synchronize_labels(e, 1000, len(r))
        total_win += len(D.segment_windows(r, lab, 1000, "train")) * 1.0
        expected += ((len(r) - 1000) // 500 + 1) * 1.0
    assert total_win == expected
    assert 1.0 < total_win / total_src < 2.0


# ---------------------------------------------------------------------------
# normalize / layout
# ---------------------------------------------------------------------------

def test_normalization_constants():
    sig = np.zeros((6, 4))
    sig[0] = [16, -16, 8, 0]
    sig[3] = [-1000, 2000, -2000, 0]
    out = D.normalize(sig)
    np.testing.assert_array_equal(out[0], [1, -1, 0.5, 0])
    np.testing.assert_array_equal(out[3], [-0.5, 1, -1, 0])
    assert not D.normalize(np.zeros((6, 10))).any()


def test_out_of_range_counted_not_clamped():
    before = D.range_warnings.out_of_range
    sig = np.zeros((6, 2))
    sig[1, 0] = 20.0
    out = D.normalize(sig)
    assert out[1, 0] == 1.25
    assert D.range_warnings.out_of_range == before + 1


def test_layouts():
    x = np.arange(6 * 1000.0).reshape(6, 1000)
    sp = D.arrange_layout(x, "spatial")
    tp = D.arrange_layout(x, "temporal")
    assert sp.shape == (1, 6, 1000) and tp.shape == (6, 1, 1000)
    np.testing.assert_array_equal(D.inverse_layout(sp, "spatial"), x)
    np.testing.assert_array_equal(D.inverse_layout(tp, "temporal"), x)
    with pytest.raises(D.DataFormatError):
        D.arrange_layout(np.zeros((5, 10)), "spatial")


# ---------------------------------------------------------------------------
# downsampling
# ---------------------------------------------------------------------------

def test_downsample_structure():
    n = 10_000
    r = D.ImuRecording(np.arange(n * 6.0).reshape(n, 6), 1000.0)
    lab = (np.arange(n) // 300 % 2).astype(np.int8)
    reps = D.downsample_random(r, lab, 20, 20, seed=3)
    assert len(reps) == 20
    for dr, dl in reps:
        assert len(dr) == 200 and dr.rate_hz == 20
        src = (dr.samples[:, 0] / 6).astype(int)
        assert np.all(np.diff(dr.t) > 0)
        np.testing.assert_array_equal(src // 50, np.arange(200))  # one index per block
        np.testing.assert_array_equal(dl, lab[src])
    assert len({tuple(d.t) for d, _ in reps}) > 1
    total = sum(d.duration_s for d, _ in reps)
    assert total == pytest.approx(20 * r.duration_s)
    assert total / r.duration_s == pytest.approx(52080 / 2604)


def test_downsample_deterministic():
    r = D.ImuRecording(np.random.default_rng(0).normal(size=(1000, 6)), 1000.0)
    lab = np.zeros(1000, dtype=np.int8)
    a = D.downsample_random(r, lab, 20, 3, seed=9)
    b = D.downsample_random(r, lab, 20, 3, seed=9)
    for (ra, _), (rb, _) in zip(a, b):
        assert ra.samples.tobytes() == rb.samples.tobytes()


def test_downsample_rejects_fractional_block():
    with pytest.raises(ValueError):
        D.downsample_random(rec(100), np.zeros(100), 30, 1)


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def test_csv_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    r = D.ImuRecording(rng.normal(size=(50, 6)), 1000.0, subject_id="S2", activity="running", speed_kmh=11, strike="FFS")
    ev = events((0.0, 1), (0.0123, 0), (0.031, 1))
    base = D.write_recording(r, ev, tmp_path)
    assert (tmp_path / f"{r.rec_id}.imu.csv").read_text().splitlines()[0] == "t,ax,ay,az,gx,gy,gz"
    assert (tmp_path / f"{r.rec_id}.labels.csv").read_text().splitlines()[0] == "t,phase"
    r2, ev2 = D.read_recording(base)
    np.testing.assert_array_equal(r2.samples, r.samples)
    np.testing.assert_array_equal(r2.t, r.t)
    np.testing.assert_array_equal(ev2.times, ev.times)
    assert (r2.subject_id, r2.activity, r2.speed_kmh, r2.strike, r2.rate_hz) == ("S2", "running", 11, "FFS", 1000.0)


def test_bad_imu_header(tmp_path):
    p = tmp_path / "x.imu.csv"
    p.write_text("time,a\n1,2\n")
    with pytest.raises(D.DataFormatError):
        D.read_imu_csv(p)


def test_dataset_container_roundtrip(tmp_path):
    from gaitseg.synth import synth_dataset

    recs = synth_dataset(duration_s=3.0, seed=1, speeds=(5, 9))
    ds = D.preprocess_recordings(recs, 20, "temporal", replicas=2, seed=0)
    path = tmp_path / "d.bin"
    D.save_dataset(ds, path)
    back = D.load_dataset(path)
    assert back.layout == "temporal" and back.rate_hz == 20 and back.window_len == 20
    for a, b in ((ds.train, back.train), (ds.test, back.test)):
        assert a.signals.tobytes() == b.signals.tobytes()
        np.testing.assert_array_equal(a.labels, b.labels)
        np.testing.assert_array_equal(a.start, b.start)
        assert a.rec_ids == b.rec_ids and a.subjects == b.subjects
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    with pytest.raises(ContainerError, match="checksum"):
        D.load_dataset(path)
