"""Synthetic multi-subject FOG datasets with a controllable group bias.

Subjects alternate sex and age group so the two attributes are exactly
crossed (disease duration tracks age group). FOG segments carry either a
tremor (4.5-6.5 Hz) or a slow akinetic sway; in the disadvantaged group of
``bias_attribute`` that FOG signature is ``bias_ratio`` times weaker, which
pushes it into the amplitude range of quiet standing and makes it harder to detect.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import (
    MANIFEST_NAME,
    Axis,
    BodyLocation,
    ChannelDescriptor,
    DatasetFormat,
    SensorRecording,
    Sex,
    SubjectMetadata,
    write_metadata_csv,
    write_recording_csv,
)

CHANNELS = tuple(ChannelDescriptor(BodyLocation.LowerBack, a) for a in (Axis.X, Axis.Y, Axis.Z))
BIASABLE = ("Sex", "Age", "DiseaseDuration", "none")


@dataclass
class SynthSpec:
    n_subjects: int = 24
    duration_s: float = 200.0
    sampling_rate_hz: float = 64.0
    bias_attribute: str = "Sex"
    bias_ratio: float = 2.0
    tremulous_fraction: float = 0.7
    fog_amplitude: float = 0.1
    noise_sd: float = 0.03
    block_s: tuple = (7.0, 6.0, 7.0)  # walking, FOG, standing; fixed so every subject has the same prevalence
    seed: int = 0
    dataset_id: str = "Synthetic"


def subject_table(spec: SynthSpec, rng) -> list[SubjectMetadata]:
    rows = []
    for i in range(spec.n_subjects):
        older = (i // 2) % 2 == 1
        rows.append(SubjectMetadata(
            subject_id=f"S{i + 1:02d}",
            sex=Sex.Male if i % 2 == 0 else Sex.Female,
            age_years=float(rng.integers(70, 80) if older else rng.integers(52, 65)),
            disease_duration_years=float(rng.integers(12, 19) if older else rng.integers(2, 9)),
            dataset_id=spec.dataset_id,
        ))
    return rows


def _disadvantaged(m: SubjectMetadata, attribute: str) -> bool:
    if attribute == "Sex":
        return m.sex is Sex.Female
    if attribute == "Age":
        return m.age_years >= 70
    if attribute == "DiseaseDuration":
        return m.disease_duration_years >= 12
    return False


def synth_recording(m: SubjectMetadata, spec: SynthSpec, rng) -> SensorRecording:
    fs = spec.sampling_rate_hz
    n = int(spec.duration_s * fs)
    t = np.arange(n) / fs
    gain = 1.0 / spec.bias_ratio if _disadvantaged(m, spec.bias_attribute) else 1.0
    step_hz = rng.uniform(1.6, 2.0)
    x = np.zeros((n, 3))
    x[:, 2] = 1.0  # gravity on the vertical axis
    labels = np.zeros(n, dtype=np.int8)
    pos = 0
    while pos < n:
        # one block: walking, a FOG episode, quiet standing
        walk, fog, stand = (int(d * fs) for d in spec.block_s)
        a, b = pos, min(pos + walk, n)
        tt = t[a:b]
        phase = rng.uniform(0, 2 * np.pi)
        x[a:b, 2] += 0.25 * np.sin(2 * np.pi * step_hz * tt + phase) + 0.08 * np.sin(4 * np.pi * step_hz * tt)
        x[a:b, 0] += 0.15 * np.sin(np.pi * step_hz * tt + phase)
        x[a:b, 1] += 0.10 * np.sin(np.pi * step_hz * tt + 1.3 * phase)
        a, b = b, min(b + fog, n)
        tt = t[a:b]
        amp = spec.fog_amplitude * gain
        if rng.random() < spec.tremulous_fraction:
            f = rng.uniform(4.5, 6.5)
            x[a:b, 0] += amp * np.sin(2 * np.pi * f * tt)
            x[a:b, 2] += amp * np.sin(2 * np.pi * f * tt + 0.5)
        else:
            x[a:b, 0] += amp * np.sin(2 * np.pi * rng.uniform(0.5, 1.2) * tt)
            x[a:b, 2] += 0.7 * amp * np.sin(2 * np.pi * rng.uniform(0.5, 1.2) * tt)
        labels[a:b] = 1
        a, b = b, min(b + stand, n)
        # standing sway overlaps the weakened FOG amplitude but not the full one
        sway = spec.fog_amplitude * rng.uniform(0.2, 0.6)
        x[a:b, 0] += sway * np.sin(2 * np.pi * rng.uniform(0.5, 1.2) * t[a:b])
        x[a:b, 2] += 0.7 * sway * np.sin(2 * np.pi * rng.uniform(0.5, 1.2) * t[a:b])
        pos = b
    x += rng.normal(0.0, spec.noise_sd, size=x.shape)
    return SensorRecording(m.subject_id, spec.dataset_id, fs, CHANNELS, x, labels)


def generate(spec: SynthSpec):
    """Return ``(recordings, metadata)`` for ``spec``; deterministic in ``spec.seed``."""
    if spec.bias_attribute not in BIASABLE:
        raise ValueError(f"bias_attribute must be one of {BIASABLE}")
    rng = np.random.default_rng(spec.seed)
    metadata = subject_table(spec, rng)
    recordings = [synth_recording(m, spec, np.random.default_rng([spec.seed, i])) for i, m in enumerate(metadata)]
    return recordings, metadata


def default_experiment(dataset_dir: str = "data", **overrides) -> dict:
    cfg = {
        "dataset": dataset_dir,
        "model": "forest",
        "window_seconds": 3.0,
        "k": 3,
        "n_iterations": 4,
        "seed": 7,
        "forest": {"n_trees": 30},
        "neural": {"epochs": 6, "learning_rate": 0.01, "batch_size": 32,
                   "arch": {"conv_channels": [8, 8, 16, 16], "kernel_size": 9, "dense_dim": 32}},
    }
    cfg.update(overrides)
    return cfg


def write_fixture(out_dir, spec: SynthSpec | None = None, experiment_overrides: dict | None = None) -> Path:
    """Write ``<out>/data/`` (manifest, metadata, one CSV per subject) and ``<out>/experiment.json``."""
    spec = spec or SynthSpec()
    out = Path(out_dir)
    data = out / "data"
    data.mkdir(parents=True, exist_ok=True)
    recordings, metadata = generate(spec)
    for rec in recordings:
        write_recording_csv(rec, data / f"{rec.subject_id}.csv")
    write_metadata_csv(metadata, data / "metadata.csv")
    fmt = DatasetFormat(spec.dataset_id, spec.sampling_rate_hz, (BodyLocation.LowerBack,), ("S*.csv",))
    (data / MANIFEST_NAME).write_text(json.dumps(fmt.to_dict(), indent=2) + "\n")
    cfg_path = out / "experiment.json"
    cfg_path.write_text(json.dumps(default_experiment("data", **(experiment_overrides or {})), indent=2) + "\n")
    return cfg_path
