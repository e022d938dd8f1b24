import numpy as np
import pytest

from fogfair.errors import BandOutOfRange, SignalTooShort
from fogfair.phenotype import PhenotypeLabel, band_power, classify_episode
from fogfair.windowing import Episode


def tone(f, fs=64.0, seconds=4.0, amp=1.0, phase=0.3):
    t = np.arange(int(fs * seconds)) / fs
    return amp * np.sin(2 * np.pi * f * t + phase)


def _episode(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = np.repeat(x[:, None], 3, axis=1)
    return Episode("S", 0, x.shape[0], x)


def _dft_band(x, fs, lo, hi):
    """Reference periodogram band sum via an explicit DFT matrix (no FFT)."""
    n = x.size
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    xw = (x - x.mean()) * w
    total = 0.0
    for k in range(n // 2 + 1):
        f = k * fs / n
        if lo < f <= hi:
            c = np.sum(xw * np.exp(-2j * np.pi * k * np.arange(n) / n))
            total += abs(c) ** 2 * (1 if k in (0, n // 2) else 2)
    return total / (np.sum(w**2) * n)


def test_tone_concentration():
    five, one = tone(5.0), tone(1.0)
    assert band_power(five, 64.0, 3, 8) > 1e6 * band_power(five, 64.0, 0, 3)
    assert band_power(one, 64.0, 0, 3) > 1e6 * band_power(one, 64.0, 3, 8)


def test_two_tone_balance_matches_dft_oracle():
    x = tone(1.0) + tone(5.0, phase=1.1)
    lo, hi = band_power(x, 64.0, 0, 3), band_power(x, 64.0, 3, 8)
    assert abs(lo - hi) / max(lo, hi) < 0.05
    assert lo == pytest.approx(_dft_band(x, 64.0, 0, 3), rel=1e-9)
    assert hi == pytest.approx(_dft_band(x, 64.0, 3, 8), rel=1e-9)


def test_band_power_errors():
    with pytest.raises(SignalTooShort):
        band_power(np.zeros(63), 64.0, 0, 3)
    with pytest.raises(BandOutOfRange):
        band_power(np.zeros(128), 64.0, 3, 40)


def test_classify_examples():
    assert classify_episode(_episode(tone(5.0)), 64.0) is PhenotypeLabel.Tremulous
    assert classify_episode(_episode(tone(1.0)), 64.0) is PhenotypeLabel.Akinetic


def test_boundary_bin_is_locomotion():
    # the lobe of an exact 3 Hz tone is symmetric about the edge and its centre bin lies in (0, 3]
    assert classify_episode(_episode(tone(3.0, seconds=1.0)), 64.0) is PhenotypeLabel.Akinetic


def _padded_band(x, fs, lo, hi, nfft):
    """Band sum of the Hann periodogram zero-padded to ``nfft``, via an explicit DFT matrix."""
    n = x.size
    w = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)
    xw = (x - x.mean()) * w
    k = np.arange(nfft // 2 + 1)
    f = k * fs / nfft
    k = k[(f > lo) & (f <= hi)]
    c = np.exp(-2j * np.pi * np.outer(k, np.arange(n)) / nfft) @ xw
    return float(np.sum(2 * np.abs(c) ** 2)) / (np.sum(w**2) * nfft)


def test_white_noise_matches_band_comparison():
    tremulous = 0
    for seed in range(40):
        x = np.random.default_rng(seed).normal(size=(256, 3))
        a = classify_episode(_episode(x), 64.0)
        assert classify_episode(_episode(x.copy()), 64.0) is a
        freeze = sum(_padded_band(x[:, j], 64.0, 3, 8, 1280) for j in range(3))
        loco = sum(_padded_band(x[:, j], 64.0, 0, 3, 1280) for j in range(3))
        assert (a is PhenotypeLabel.Tremulous) == (freeze > loco)
        tremulous += a is PhenotypeLabel.Tremulous
    # a flat spectrum puts 5/8 of the (0, 8] power in the wider freeze band
    assert tremulous > 20


def test_short_episode_is_padded():
    ep = _episode(tone(5.0, seconds=0.5))
    assert classify_episode(ep, 64.0) is PhenotypeLabel.Tremulous


def test_gravity_offset_and_orientation():
    x = np.zeros((256, 3))
    x[:, 2] = 1.0 + 0.2 * tone(6.0)
    x[:, 0] = 0.1 * tone(6.0, phase=2.0)
    assert classify_episode(_episode(x), 64.0) is PhenotypeLabel.Tremulous
