import numpy as np
import pytest

from gaitseg import datapipe as D
from gaitseg import model as M
from gaitseg import runtime as R
from gaitseg.container import ContainerError
from gaitseg.synth import GaitProfile, synth_recording


@pytest.fixture(scope="module")
def net20():
    return M.build_network(M.NetworkSpec("imunet", "spatial", 2, 20), seed=0)


@pytest.fixture(scope="module")
def stream20():
    """A 30 s recording at 20 Hz: raw rows, labels, and disjoint normalized windows."""
    rec, ev = synth_recording(GaitProfile(9, "RFS"), 30.0, seed=1)
    labels = D.synchronize_labels(ev, 1000, len(rec))
    (r20, l20), = D.downsample_random(rec, labels, 20, 1, seed=0)
    rows = [(float(t), s) for t, s in zip(r20.t, r20.samples)]
    windows = D.segment_windows(r20, l20, 20, "test")
    return rows, l20, windows


def test_checkpoint_roundtrip(tmp_path, net20):
    path = tmp_path / "m.ckpt"
    R.save_checkpoint(net20, path, extra={"fold": 1})
    back = R.load_checkpoint(path)
    assert back.spec == net20.spec
    assert M.count_params(back) == M.count_params(net20)
    a, b = net20.state_dict(), back.state_dict()
    assert a.keys() == b.keys()
    for k in a:
        assert a[k].dtype == b[k].dtype and a[k].tobytes() == b[k].tobytes()
    assert R.checkpoint_meta(path) == {"fold": "1"}


def test_checkpoint_truncated(tmp_path, net20):
    path = tmp_path / "m.ckpt"
    R.save_checkpoint(net20, path)
    data = path.read_bytes()
    path.write_bytes(data[: len(data) // 2])
    with pytest.raises(ContainerError, match="checksum"):
        R.load_checkpoint(path)


def test_checkpoint_corrupted_byte(tmp_path, net20):
    path = tmp_path / "m.ckpt"
    R.save_checkpoint(net20, path)
    data = bytearray(path.read_bytes())
    data[len(data) // 2] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(ContainerError, match="checksum"):
        R.load_checkpoint(path)


def test_checkpoint_version_mismatch(tmp_path, net20, monkeypatch):
    from gaitseg import container

    path = tmp_path / "m.ckpt"
    monkeypatch.setattr(container, "FORMAT_VERSION", 99)
    R.save_checkpoint(net20, path)
    monkeypatch.undo()
    with pytest.raises(ContainerError, match="version"):
        R.load_checkpoint(path)


def test_wrong_magic(tmp_path, net20):
    from gaitseg.runtime import load_checkpoint

    ds_path = tmp_path / "d.bin"
    from gaitseg.container import write_container

    write_container(ds_path, b"GSEGDATA", {}, [])
    with pytest.raises(ContainerError, match="magic"):
        load_checkpoint(ds_path)


def test_pool4_rejected():
    net = M.build_network(M.NetworkSpec("imunet", window_len=256))
    with pytest.raises(ValueError, match="pool_k=2"):
        R.StreamState(net)
    with pytest.raises(ValueError, match="pool_k"):
        R.run_stream(net, [])


def test_trigger_cadence(net20):
    st = R.StreamState(net20)
    triggers = [st.push_sample(np.zeros(6), i / 20) for i in range(60)]
    assert not any(triggers[:19])
    assert triggers[19]
    assert [i for i, t in enumerate(triggers) if t] == [19, 39, 59]  # one per second


def test_time_regression(net20):
    st = R.StreamState(net20)
    st.push_sample(np.zeros(6), 1.0)
    st.push_sample(np.zeros(6), 1.0)
    with pytest.raises(ValueError, match="backwards"):
        st.push_sample(np.zeros(6), 0.5)


def test_no_model():
    st = R.StreamState(None)
    for i in range(20):
        st.push_sample(np.zeros(6), i / 20)
    with pytest.raises(RuntimeError, match="no model"):
        R.infer_window(st)


def test_take_window_before_full(net20):
    with pytest.raises(RuntimeError):
        R.StreamState(net20).take_window()


def test_constant_stance_no_events():
    st = R.StreamState(None)
    st._emit(np.zeros(20, dtype=np.int8), np.arange(20) / 20, 0)
    st._emit(np.zeros(20, dtype=np.int8), np.arange(20, 40) / 20, 1)
    assert st.events == []
    assert st.initial_phase == D.STANCE


def test_single_transition_event():
    st = R.StreamState(None)
    phases = np.array([0] * 13 + [1] * 7, dtype=np.int8)
    st._emit(phases, 5.0 + np.arange(20) / 20, 3)
    assert len(st.events) == 1
    ev = st.events[0]
    assert ev.kind == "swing_onset" and ev.time_s == pytest.approx(5.65) and ev.source_window == 3


def test_stream_matches_batch(net20, stream20):
    rows, _, windows = stream20
    st = R.run_stream(net20, rows)
    assert st.windows_done == len(windows)
    np.testing.assert_array_equal(st.labels(), R.batch_labels(net20, windows.signals).reshape(-1))


def test_threaded_matches_single(net20, stream20):
    rows, _, _ = stream20
    a = R.run_stream(net20, rows)
    b = R.run_stream(net20, rows, threaded=True, queue_size=2)
    np.testing.assert_array_equal(a.labels(), b.labels())
    assert [(e.kind, e.time_s, e.source_window) for e in a.events] == \
        [(e.kind, e.time_s, e.source_window) for e in b.events]


def test_events_rebuild_label_stream(net20, stream20):
    rows, _, _ = stream20
    st = R.run_stream(net20, rows)
    times = np.concatenate(st.phase_times)
    kinds = [e.kind for e in st.events]
    assert all(a != b for a, b in zip(kinds, kinds[1:]))
    ev_t = [e.time_s for e in st.events]
    assert ev_t == sorted(ev_t)
    rebuilt = np.full(len(times), st.initial_phase, dtype=np.int8)
    for e in st.events:
        rebuilt[times >= e.time_s] = D.STANCE if e.kind == "stance_onset" else D.SWING
    np.testing.assert_array_equal(rebuilt, st.labels())


def test_latency_stats(net20, stream20):
    rows, _, _ = stream20
    lat = R.run_stream(net20, rows).latency
    assert len(lat.samples_ms) == 30
    assert np.all(np.isfinite(lat.samples_ms))
    assert lat.max >= lat.mean >= lat.min > 0
    assert np.isnan(R.LatencyStats().mean)


def test_worker_error_propagates(stream20):
    net = M.build_network(M.NetworkSpec("imunet", "spatial", 2, 20), seed=0)

    def boom(*a, **k):
        raise FloatingPointError("boom")

    net.forward = boom
    with pytest.raises(FloatingPointError):
        R.run_stream(net, stream20[0], threaded=True)
