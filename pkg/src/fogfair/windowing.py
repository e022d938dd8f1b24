"""Non-overlapping window segmentation and FOG episode extraction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import RecordingTooShort
from .ingest import SensorRecording

DEFAULT_MIN_EPISODE_S = 0.5


@dataclass
class Window:
    subject_id: str
    start_index: int
    data: np.ndarray
    label: int
    recording_index: int = 0


@dataclass
class WindowSet:
    windows: list[Window]
    window_seconds: float
    sampling_rate_hz: float
    dataset_id: str

    def __len__(self):
        return len(self.windows)

    @property
    def window_len(self) -> int:
        return window_length(self.window_seconds, self.sampling_rate_hz)

    def arrays(self):
        """Stack into ``(X, y, subject_ids)`` with X shaped [n, window_len, n_channels]."""
        if not self.windows:
            return np.empty((0, self.window_len, 0)), np.empty(0, dtype=np.int8), np.empty(0, dtype=object)
        X = np.stack([w.data for w in self.windows])
        y = np.array([w.label for w in self.windows], dtype=np.int8)
        sid = np.array([w.subject_id for w in self.windows], dtype=object)
        return X, y, sid

    def extend(self, other: "WindowSet") -> None:
        self.windows.extend(other.windows)


def window_length(window_seconds: float, sampling_rate_hz: float) -> int:
    return int(round(window_seconds * sampling_rate_hz))


def segment(rec: SensorRecording, window_seconds: float, recording_index: int = 0) -> WindowSet:
    """Tile ``rec`` from sample 0 with stride = window length, dropping the partial tail.

    Each window is labelled by the annotation at its last sample.
    """
    L = window_length(window_seconds, rec.sampling_rate_hz)
    if L < 1 or rec.n_samples < L:
        raise RecordingTooShort(
            f"{rec.subject_id}: {rec.n_samples} samples < window of {L}"
        )
    n = rec.n_samples // L
    windows = [
        Window(
            subject_id=rec.subject_id,
            start_index=i * L,
            data=rec.samples[i * L : (i + 1) * L],
            label=int(rec.labels[(i + 1) * L - 1]),
            recording_index=recording_index,
        )
        for i in range(n)
    ]
    return WindowSet(windows, float(window_seconds), rec.sampling_rate_hz, rec.dataset_id)


@dataclass
class Episode:
    subject_id: str
    start_index: int
    end_index: int
    data: np.ndarray
    recording_index: int = 0
    episode_id: str = field(default="")

    def __post_init__(self):
        if not self.episode_id:
            self.episode_id = f"{self.subject_id}#{self.recording_index}:{self.start_index}"

    @property
    def n_samples(self) -> int:
        return self.end_index - self.start_index


def fog_runs(labels: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of label 1 as half-open ``(start, end)`` index pairs."""
    padded = np.concatenate(([0], np.asarray(labels, dtype=np.int8), [0]))
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def extract_episodes(
    rec: SensorRecording, min_duration_s: float = DEFAULT_MIN_EPISODE_S, recording_index: int = 0
) -> list[Episode]:
    min_len = min_duration_s * rec.sampling_rate_hz
    return [
        Episode(rec.subject_id, a, b, rec.samples[a:b], recording_index)
        for a, b in fog_runs(rec.labels)
        if (b - a) >= min_len - 1e-9
    ]
