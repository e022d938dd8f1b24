import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fogfair.errors import RecordingTooShort
from fogfair.windowing import extract_episodes, segment, window_length

from conftest import make_recording


def test_daphnet_window_count():
    rec = make_recording(np.zeros((640, 3)), fs=64.0)
    ws = segment(rec, 4.5)
    assert ws.window_len == 288
    assert len(ws) == 2
    assert ws.windows[-1].start_index + 288 == 576  # 64 trailing samples dropped


def test_last_sample_label():
    labels = np.zeros(192, dtype=np.int8)
    labels[191] = 1
    ws = segment(make_recording(np.zeros((192, 1)), labels), 3.0)
    assert [w.label for w in ws.windows] == [1]


def test_window_len_128hz():
    assert window_length(3.0, 128.0) == 384


def test_too_short():
    with pytest.raises(RecordingTooShort):
        segment(make_recording(np.zeros((100, 1))), 3.0)


@given(n=st.integers(192, 2000), seconds=st.sampled_from([1.0, 2.5, 3.0]))
@settings(max_examples=40, deadline=None)
def test_windows_tile_a_prefix(n, seconds):
    rec = make_recording(np.arange(n, dtype=float)[:, None])
    ws = segment(rec, seconds)
    L = ws.window_len
    starts = [w.start_index for w in ws.windows]
    assert starts == list(range(0, len(starts) * L, L))
    assert n - len(starts) * L < L
    cat = np.concatenate([w.data[:, 0] for w in ws.windows])
    np.testing.assert_array_equal(cat, np.arange(len(starts) * L))
    again = segment(rec, seconds)
    assert all(np.array_equal(a.data, b.data) and a.label == b.label for a, b in zip(ws.windows, again.windows))


def test_episode_runs():
    labels = np.array([0, 0, 1, 1, 1, 0, 1, 0], dtype=np.int8)
    eps = extract_episodes(make_recording(np.zeros((8, 1)), labels), 0.0)
    assert [(e.start_index, e.end_index) for e in eps] == [(2, 5), (6, 7)]


def test_episode_edge_cases():
    assert extract_episodes(make_recording(np.zeros((50, 1))), 0.0) == []
    eps = extract_episodes(make_recording(np.zeros((50, 1)), np.ones(50, dtype=np.int8)), 0.0)
    assert [(e.start_index, e.end_index) for e in eps] == [(0, 50)]


def test_min_duration_filter():
    labels = np.zeros(200, dtype=np.int8)
    labels[10:20] = 1  # 10 samples < 32
    labels[50:90] = 1
    eps = extract_episodes(make_recording(np.zeros((200, 1)), labels, fs=64.0), 0.5)
    assert [(e.start_index, e.end_index) for e in eps] == [(50, 90)]


@given(st.lists(st.integers(0, 1), min_size=1, max_size=300))
@settings(max_examples=60, deadline=None)
def test_episode_lengths_sum_to_fog_count(labels):
    labels = np.array(labels, dtype=np.int8)
    eps = extract_episodes(make_recording(np.zeros((labels.size, 1)), labels), 0.0)
    assert sum(e.n_samples for e in eps) == int(labels.sum())
    for e in eps:
        assert labels[e.start_index:e.end_index].all()
        assert e.start_index == 0 or labels[e.start_index - 1] == 0
        assert e.end_index == labels.size or labels[e.end_index] == 0
