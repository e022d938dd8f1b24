"""Spectral FOG phenotyping: tremulous vs akinetic episodes."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import BandOutOfRange, SignalTooShort
from .ingest import LOWER_EXTREMITY, BodyLocation, ChannelDescriptor
from .windowing import Episode

LOCOMOTION_BAND = (0.0, 3.0)
FREEZE_BAND = (3.0, 8.0)
# episodes are compared on a zero-padded spectrum this fine, so a tone's main lobe
# splits at the 3 Hz edge by where the tone sits rather than by the episode length
PHENOTYPE_GRID_HZ = 0.05


class PhenotypeLabel(str, Enum):
    Tremulous = "Tremulous"
    Akinetic = "Akinetic"


@dataclass(frozen=True)
class BandPower:
    freeze_band_power: float
    locomotion_band_power: float


def _hann(n: int) -> np.ndarray:
    # periodic form: integer-cycle tones fall on exactly three bins
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _power_spectrum(x: np.ndarray, fs: float, min_len: int = 0):
    """One-sided Hann periodogram of the mean-removed columns of ``x``, summed over columns.

    Columns shorter than ``min_len`` are zero-padded after windowing.
    Returns ``(freqs, power)`` with power per bin (PSD times bin width), so the
    bins sum to roughly the signal variance.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    w = _hann(n)
    xw = (x - x.mean(axis=0)) * w[:, None]
    nfft = max(n, min_len)
    spec = np.abs(np.fft.rfft(xw, n=nfft, axis=0)) ** 2
    spec = spec.sum(axis=1)
    power = spec / (fs * np.sum(w**2)) * (fs / nfft)
    if nfft % 2 == 0:
        power[1:-1] *= 2.0
    else:
        power[1:] *= 2.0
    freqs = np.fft.rfftfreq(nfft, d=1.0 / fs)
    return freqs, power


def _sum_band(freqs, power, lo, hi) -> float:
    return float(power[(freqs > lo) & (freqs <= hi)].sum())


def band_power(signal, sampling_rate_hz: float, band_lo_hz: float, band_hi_hz: float) -> float:
    """Total Hann-periodogram power over bins ``band_lo < f <= band_hi``.

    The DC bin is therefore never counted. Needs at least one second of data.
    """
    signal = np.asarray(signal, dtype=np.float64)
    if signal.shape[0] < sampling_rate_hz:
        raise SignalTooShort(f"{signal.shape[0]} samples < 1 s at {sampling_rate_hz} Hz")
    if not (0 <= band_lo_hz < band_hi_hz <= sampling_rate_hz / 2):
        raise BandOutOfRange(f"band ({band_lo_hz}, {band_hi_hz}] outside [0, {sampling_rate_hz / 2}]")
    freqs, power = _power_spectrum(signal, sampling_rate_hz)
    return _sum_band(freqs, power, band_lo_hz, band_hi_hz)


def primary_sensor_columns(channels: Sequence[ChannelDescriptor] | None, n_columns: int) -> list[int]:
    """Columns of the sensor used for phenotyping.

    Lower back when present, else the first listed lower-extremity sensor.
    Without channel descriptors every column is used.
    """
    if not channels:
        return list(range(n_columns))
    locs = [c.body_location for c in channels]
    if BodyLocation.LowerBack in locs:
        primary = BodyLocation.LowerBack
    else:
        primary = next((l for l in locs if l in LOWER_EXTREMITY), locs[0])
    return [i for i, l in enumerate(locs) if l == primary]


def episode_band_powers(ep: Episode, sampling_rate_hz: float, channels=None) -> BandPower:
    data = np.asarray(ep.data, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    cols = primary_sensor_columns(channels, data.shape[1])
    # zero padding also covers episodes shorter than one second
    nfft = max(math.ceil(sampling_rate_hz), math.ceil(sampling_rate_hz / PHENOTYPE_GRID_HZ))
    freqs, power = _power_spectrum(data[:, cols], sampling_rate_hz, min_len=nfft)
    return BandPower(
        freeze_band_power=_sum_band(freqs, power, *FREEZE_BAND),
        locomotion_band_power=_sum_band(freqs, power, *LOCOMOTION_BAND),
    )


def classify_episode(ep: Episode, sampling_rate_hz: float, channels=None) -> PhenotypeLabel:
    """Tremulous when freeze-band (3, 8] Hz power exceeds locomotion-band (0, 3] Hz power.

    Power is the summed per-axis periodogram of the primary sensor, which is
    invariant to sensor orientation and, unlike the magnitude signal, does not
    fold zero-mean oscillations onto twice their frequency. The periodogram is
    zero-padded to a ``PHENOTYPE_GRID_HZ`` grid.
    """
    bp = episode_band_powers(ep, sampling_rate_hz, channels)
    if bp.freeze_band_power > bp.locomotion_band_power:
        return PhenotypeLabel.Tremulous
    return PhenotypeLabel.Akinetic
