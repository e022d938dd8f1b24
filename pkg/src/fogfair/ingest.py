"""Loading, resampling, scaling and cross-dataset harmonization of IMU recordings."""
from __future__ import annotations

import csv
import glob
import json
import math
import os
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ChannelMismatch,
    DataError,
    MalformedRow,
    MissingMetadata,
    MissingSamples,
    NoCompatiblePlacement,
    NonMonotonicTimestamps,
    UpsampleRequested,
)


class BodyLocation(str, Enum):
    LowerBack = "LowerBack"
    Ankle = "Ankle"
    Shank = "Shank"
    Thigh = "Thigh"


class Axis(str, Enum):
    X = "X"
    Y = "Y"
    Z = "Z"


LOWER_EXTREMITY = frozenset({BodyLocation.Ankle, BodyLocation.Shank, BodyLocation.Thigh})


def placement_class(loc: BodyLocation) -> str:
    return "lower_extremity" if loc in LOWER_EXTREMITY else "lower_back"


@dataclass(frozen=True, order=True)
class ChannelDescriptor:
    body_location: BodyLocation
    axis: Axis

    @property
    def name(self) -> str:
        return f"{self.body_location.value}_{self.axis.value}"

    @classmethod
    def parse(cls, name: str) -> "ChannelDescriptor":
        loc, sep, axis = name.strip().rpartition("_")
        if not sep:
            raise ValueError(f"channel name {name!r} is not <location>_<axis>")
        return cls(BodyLocation(loc), Axis(axis))


@dataclass
class SensorRecording:
    subject_id: str
    dataset_id: str
    sampling_rate_hz: float
    channels: tuple[ChannelDescriptor, ...]
    samples: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.channels = tuple(self.channels)
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.samples.ndim != 2 or self.samples.shape[1] != len(self.channels):
            raise DataError(
                f"samples shape {self.samples.shape} does not match {len(self.channels)} channels"
            )
        if self.labels.shape != (self.samples.shape[0],):
            raise DataError("labels length must equal the number of sample rows")
        if not self.sampling_rate_hz > 0:
            raise DataError("sampling_rate_hz must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise DataError("channel values must be finite")
        if np.any((self.labels != 0) & (self.labels != 1)):
            raise DataError("labels must be 0 or 1")
        if len(set(self.channels)) != len(self.channels):
            raise DataError("duplicate (body_location, axis) channel")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate_hz

    def select_channels(self, channels: Sequence[ChannelDescriptor]) -> "SensorRecording":
        idx = [self.channels.index(c) for c in channels]
        return replace(self, channels=tuple(channels), samples=self.samples[:, idx])


class Sex(str, Enum):
    Male = "Male"
    Female = "Female"


@dataclass(frozen=True)
class SubjectMetadata:
    subject_id: str
    sex: Sex
    age_years: float
    disease_duration_years: float
    dataset_id: str

    def __post_init__(self):
        if not self.age_years > 0:
            raise DataError(f"{self.subject_id}: age_years must be positive")
        if not self.disease_duration_years >= 0:
            raise DataError(f"{self.subject_id}: disease_duration_years must be non-negative")


class ScalingScope(str, Enum):
    TrainOnly = "TrainOnly"
    Global = "Global"


@dataclass(frozen=True)
class ScalingParams:
    channels: tuple[ChannelDescriptor, ...]
    min: np.ndarray
    max: np.ndarray
    fit_scope: ScalingScope = ScalingScope.TrainOnly


@dataclass
class DatasetFormat:
    """Contents of a dataset manifest (``manifest.json``)."""

    dataset_id: str
    sampling_rate_hz: float
    sensor_locations: tuple[BodyLocation, ...] = ()
    recordings: tuple[str, ...] = ("*.csv",)
    metadata: str = "metadata.csv"
    gap_tolerance: float = 0.5

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetFormat":
        recs = d.get("recordings", ("*.csv",))
        if isinstance(recs, str):
            recs = (recs,)
        return cls(
            dataset_id=str(d["dataset_id"]),
            sampling_rate_hz=float(d["sampling_rate_hz"]),
            sensor_locations=tuple(BodyLocation(s) for s in d.get("sensor_locations", ())),
            recordings=tuple(recs),
            metadata=d.get("metadata", "metadata.csv"),
            gap_tolerance=float(d.get("gap_tolerance", 0.5)),
        )

    def to_dict(self) -> dict:
        return {
            "dataset_id": self.dataset_id,
            "sampling_rate_hz": self.sampling_rate_hz,
            "sensor_locations": [s.value for s in self.sensor_locations],
            "recordings": list(self.recordings),
            "metadata": self.metadata,
            "gap_tolerance": self.gap_tolerance,
        }

    @classmethod
    def read(cls, path) -> "DatasetFormat":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


MANIFEST_NAME = "manifest.json"


def subject_from_filename(path) -> str:
    """``S01.csv`` and ``S01__run2.csv`` both belong to subject ``S01``."""
    return Path(path).stem.split("__")[0]


def read_recording_csv(path, dataset_id: str, sampling_rate_hz: float, gap_tolerance: float = 0.5):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedRow(path, 1, "empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 3 or header[0] != "time_s" or header[-1] != "fog_label":
            raise MalformedRow(path, 1, "header must be time_s,<loc>_<axis>...,fog_label")
        try:
            channels = tuple(ChannelDescriptor.parse(h) for h in header[1:-1])
        except ValueError as exc:
            raise MalformedRow(path, 1, str(exc)) from None
        width = len(header)
        times, rows, labels = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise MalformedRow(path, line_no, f"expected {width} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[:-1]]
            except ValueError:
                raise MalformedRow(path, line_no, "non-numeric value") from None
            if not all(math.isfinite(v) for v in vals):
                raise MalformedRow(path, line_no, "non-finite value")
            lab = row[-1].strip()
            if lab not in ("0", "1"):
                raise MalformedRow(path, line_no, f"fog_label {lab!r} not in {{0,1}}")
            if times and vals[0] <= times[-1][0]:
                raise NonMonotonicTimestamps(path, line_no)
            if times and vals[0] - times[-1][0] > (1.0 + gap_tolerance) / sampling_rate_hz:
                raise MissingSamples(path, line_no)
            times.append((vals[0], line_no))
            rows.append(vals[1:])
            labels.append(int(lab))
    if not rows:
        raise MalformedRow(path, 2, "no sample rows")
    return SensorRecording(
        subject_id=subject_from_filename(path),
        dataset_id=dataset_id,
        sampling_rate_hz=float(sampling_rate_hz),
        channels=channels,
        samples=np.array(rows, dtype=np.float64),
        labels=np.array(labels, dtype=np.int8),
    )


_SEX_CODES = {"M": Sex.Male, "F": Sex.Female}


def read_metadata_csv(path, dataset_id: str) -> list[SubjectMetadata]:
    path = Path(path)
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["subject_id", "sex", "age_years", "disease_duration_years"]:
            raise MalformedRow(path, 1, "header must be subject_id,sex,age_years,disease_duration_years")
        seen = set()
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(path, line_no, "expected 4 fields")
            sid, sex, age, dur = (v.strip() for v in row)
            if sex not in _SEX_CODES:
                raise MalformedRow(path, line_no, f"sex {sex!r} not in {{M,F}}")
            if sid in seen:
                raise MalformedRow(path, line_no, f"duplicate subject {sid!r}")
            seen.add(sid)
            try:
                out.append(SubjectMetadata(sid, _SEX_CODES[sex], float(age), float(dur), dataset_id))
            except (ValueError, DataError) as exc:
                raise MalformedRow(path, line_no, str(exc)) from None
    return out


def load_dataset(path, fmt: DatasetFormat | None = None):
    """Load every recording matched by the manifest globs plus the metadata table.

    Returns ``(recordings, metadata)``; recordings are ordered by file name.
    """
    path = Path(path)
    if fmt is None:
        fmt = DatasetFormat.read(path / MANIFEST_NAME)
    files = sorted({f for pat in fmt.recordings for f in glob.glob(os.path.join(path, pat))})
    meta_path = (path / fmt.metadata).resolve()
    files = [f for f in files if Path(f).resolve() != meta_path]
    recordings = [
        read_recording_csv(f, fmt.dataset_id, fmt.sampling_rate_hz, fmt.gap_tolerance) for f in files
    ]
    if fmt.sensor_locations:
        allowed = set(fmt.sensor_locations)
        for f, rec in zip(files, recordings):
            extra = {c.body_location for c in rec.channels} - allowed
            if extra:
                raise MalformedRow(f, 1, f"locations {sorted(e.value for e in extra)} not in manifest")
    metadata = read_metadata_csv(meta_path, fmt.dataset_id)
    by_id = {m.subject_id for m in metadata}
    rec_ids = {r.subject_id for r in recordings}
    missing = sorted(rec_ids - by_id)
    if missing:
        raise MissingMetadata(missing[0])
    orphans = sorted(by_id - rec_ids)
    if orphans:
        raise DataError(f"metadata rows without recordings: {orphans}")
    return recordings, metadata


def write_recording_csv(rec: SensorRecording, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_s", *(c.name for c in rec.channels), "fog_label"])
        for i in range(rec.n_samples):
            w.writerow([repr(i / rec.sampling_rate_hz), *map(repr, rec.samples[i].tolist()), int(rec.labels[i])])


def write_metadata_csv(metadata: Iterable[SubjectMetadata], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["subject_id", "sex", "age_years", "disease_duration_years"])
        for m in metadata:
            w.writerow([m.subject_id, "M" if m.sex is Sex.Male else "F", repr(m.age_years), repr(m.disease_duration_years)])


def resample(rec: SensorRecording, target_hz: float) -> SensorRecording:
    """Downsample with a moving-average anti-alias filter and linear interpolation.

    Labels take the value of the nearest original sample.
    """
    src = rec.sampling_rate_hz
    if target_hz > src:
        raise UpsampleRequested(f"target {target_hz} Hz exceeds source {src} Hz")
    if target_hz == src:
        return rec
    width = math.ceil(src / target_hz)
    n = rec.n_samples
    m = int(math.floor(n * target_hz / src + 1e-9))
    kernel = np.ones(width)
    lo = (width - 1) // 2
    counts = np.convolve(np.ones(n), kernel, mode="full")[lo : lo + n]
    t_src = np.arange(n) / src
    t_dst = np.arange(m) / target_hz
    out = np.empty((m, rec.samples.shape[1]))
    for c in range(rec.samples.shape[1]):
        smoothed = np.convolve(rec.samples[:, c], kernel, mode="full")[lo : lo + n] / counts
        out[:, c] = np.interp(t_dst, t_src, smoothed)
    nearest = np.minimum(np.rint(t_dst * src).astype(np.int64), n - 1)
    return replace(rec, sampling_rate_hz=float(target_hz), samples=out, labels=rec.labels[nearest])


def fit_scaling(recordings: Sequence[SensorRecording], scope: ScalingScope = ScalingScope.TrainOnly) -> ScalingParams:
    if not recordings:
        raise ValueError("fit_scaling needs at least one recording")
    channels = recordings[0].channels
    for r in recordings[1:]:
        if r.channels != channels:
            raise ChannelMismatch(f"{r.subject_id}: channels differ from {recordings[0].subject_id}")
    lo = np.min([r.samples.min(axis=0) for r in recordings], axis=0)
    hi = np.max([r.samples.max(axis=0) for r in recordings], axis=0)
    return ScalingParams(channels=channels, min=lo, max=hi, fit_scope=ScalingScope(scope))


def apply_scaling(rec: SensorRecording, params: ScalingParams) -> SensorRecording:
    """Min-Max scale each channel; values outside the fit range are not clipped."""
    if rec.channels != params.channels:
        raise ChannelMismatch(f"{rec.subject_id}: channels do not match scaling parameters")
    return replace(rec, samples=scale_array(rec.samples, params))


def scale_array(x: np.ndarray, params: ScalingParams) -> np.ndarray:
    """Min-Max formula on any array whose last axis is the channel axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != len(params.channels):
        raise ChannelMismatch(f"{x.shape[-1]} channels vs {len(params.channels)} fitted")
    span = params.max - params.min
    const = span == 0
    out = (x - params.min) / np.where(const, 1.0, span)
    out[..., const] = 0.5
    return out


def _pick_location(rec: SensorRecording, cls: str) -> BodyLocation:
    for c in rec.channels:
        if placement_class(c.body_location) == cls:
            return c.body_location
    raise NoCompatiblePlacement(f"{rec.subject_id} has no {cls} sensor")


def harmonize_pair(source: Sequence[SensorRecording], target: Sequence[SensorRecording]):
    """Match sensor placement class and sampling rate between source and target recordings.

    Lower-back sensors are preferred when both sides carry one; otherwise the
    lower-extremity class (ankle, shank, thigh) is used. Each recording keeps a
    single sensor of the chosen class (its first listed one) and the axes common
    to every recording. Source channels are relabelled to the target's
    placement so downstream scaling and models see one channel layout.
    """
    if not source or not target:
        raise ValueError("source and target must be non-empty")
    everyone = [*source, *target]

    def classes(r):
        return {placement_class(c.body_location) for c in r.channels}

    shared = set.intersection(*(classes(r) for r in everyone))
    if not shared:
        raise NoCompatiblePlacement("no body-location class common to all recordings")
    cls = "lower_back" if "lower_back" in shared else "lower_extremity"

    picked = [(r, _pick_location(r, cls)) for r in everyone]
    axes = set.intersection(*({c.axis for c in r.channels if c.body_location == loc} for r, loc in picked))
    if not axes:
        raise NoCompatiblePlacement("no common axes for the matched placement")
    axes = sorted(axes, key=lambda a: a.value)
    target_loc = _pick_location(target[0], cls)
    canon = tuple(ChannelDescriptor(target_loc, a) for a in axes)
    rate = min(r.sampling_rate_hz for r in everyone)

    out = []
    for r, loc in picked:
        sel = r.select_channels([ChannelDescriptor(loc, a) for a in axes])
        sel = replace(sel, channels=canon)
        out.append(resample(sel, rate))
    return out[: len(source)], out[len(source) :]


DAPHNET_RATE_HZ = 64.0
_DAPHNET_CHANNELS = tuple(
    ChannelDescriptor(loc, ax)
    for loc in (BodyLocation.Ankle, BodyLocation.Thigh, BodyLocation.LowerBack)
    for ax in (Axis.X, Axis.Y, Axis.Z)
)


def convert_daphnet(raw_dir, out_dir, metadata_csv=None, min_segment_s: float = 10.0) -> list[Path]:
    """Convert the public Daphnet ``SxxRyy.txt`` files into the recording CSV layout.

    Daphnet annotates 0 (outside experiment), 1 (no freeze) and 2 (freeze).
    Rows annotated 0 are removed and each contiguous remaining stretch becomes
    its own recording file, since gaps are never imputed. Accelerations are
    converted from milli-g to g. ``metadata_csv`` is copied alongside, and must
    be supplied by the user because the raw files carry no demographics.
    """
    raw_dir, out_dir = Path(raw_dir), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for f in sorted(raw_dir.glob("S*R*.txt")):
        data = np.loadtxt(f)
        if data.ndim != 2 or data.shape[1] != 11:
            raise MalformedRow(f, 1, "expected 11 whitespace-separated columns")
        keep = data[:, 10] > 0
        edges = np.flatnonzero(np.diff(np.concatenate(([0], keep.astype(np.int8), [0]))))
        subject = f.stem[:3]
        for seg_no, (a, b) in enumerate(zip(edges[::2], edges[1::2])):
            if (b - a) < min_segment_s * DAPHNET_RATE_HZ:
                continue
            seg = data[a:b]
            rec = SensorRecording(
                subject_id=subject,
                dataset_id="Daphnet",
                sampling_rate_hz=DAPHNET_RATE_HZ,
                channels=_DAPHNET_CHANNELS,
                samples=seg[:, 1:10] / 1000.0,
                labels=(seg[:, 10] == 2).astype(np.int8),
            )
            dest = out_dir / f"{subject}__{f.stem[3:]}_{seg_no:02d}.csv"
            write_recording_csv(rec, dest)
            written.append(dest)
    fmt = DatasetFormat(
        dataset_id="Daphnet",
        sampling_rate_hz=DAPHNET_RATE_HZ,
        sensor_locations=(BodyLocation.Ankle, BodyLocation.Thigh, BodyLocation.LowerBack),
        recordings=("S*.csv",),
    )
    with open(out_dir / MANIFEST_NAME, "w") as fh:
        json.dump(fmt.to_dict(), fh, indent=2)
    if metadata_csv is not None:
        (out_dir / "metadata.csv").write_bytes(Path(metadata_csv).read_bytes())
    return written
