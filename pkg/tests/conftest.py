import numpy as np
import pytest

from fogfair.ingest import Axis, BodyLocation, ChannelDescriptor, SensorRecording, Sex, SubjectMetadata
from fogfair.synth import SynthSpec, write_fixture

BACK = tuple(ChannelDescriptor(BodyLocation.LowerBack, a) for a in (Axis.X, Axis.Y, Axis.Z))


def make_recording(samples, labels=None, fs=64.0, sid="S01", ds="Toy", channels=None):
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 1:
        samples = samples[:, None]
    if channels is None:
        channels = BACK[: samples.shape[1]]
    if labels is None:
        labels = np.zeros(samples.shape[0], dtype=np.int8)
    return SensorRecording(sid, ds, fs, channels, samples, labels)


def make_meta(sid, sex="M", age=60.0, dur=5.0, ds="Toy"):
    return SubjectMetadata(sid, Sex.Male if sex == "M" else Sex.Female, float(age), float(dur), ds)


@pytest.fixture(scope="session")
def synth_fixture(tmp_path_factory):
    """The default biased synthetic dataset (Sex-disadvantaged FOG amplitude) and its experiment config."""
    out = tmp_path_factory.mktemp("synth")
    return write_fixture(out, SynthSpec())
