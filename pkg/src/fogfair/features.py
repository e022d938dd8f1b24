"""ECDF window descriptors for the tree ensemble."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import WindowTooShort
from .windowing import Window

DEFAULT_N_QUANTILES = 25


@dataclass
class FeatureVector:
    values: np.ndarray
    subject_id: str
    start_index: int


def quantile_levels(n_quantiles: int) -> np.ndarray:
    return (np.arange(n_quantiles) + 0.5) / n_quantiles


def ecdf_matrix(data: np.ndarray, n_quantiles: int = DEFAULT_N_QUANTILES) -> np.ndarray:
    """Per-channel quantiles at levels (k + 0.5)/n followed by the channel mean.

    ``data`` is ``[window_len, n_channels]`` or a batch ``[n, window_len, n_channels]``.
    Quantiles interpolate linearly between order statistics (numpy's default
    estimator), so the output depends only on each channel's value multiset.
    """
    data = np.asarray(data, dtype=np.float64)
    single = data.ndim == 2
    if single:
        data = data[None]
    n, length, n_ch = data.shape
    if length < n_quantiles:
        raise WindowTooShort(f"window of {length} samples < {n_quantiles} quantiles")
    srt = np.sort(data, axis=1)
    q = np.quantile(srt, quantile_levels(n_quantiles), axis=1)  # [nq, n, n_ch]
    mean = srt.mean(axis=1)  # sorted order: bitwise permutation invariant
    feats = np.concatenate([q.transpose(1, 2, 0), mean[:, :, None]], axis=2)
    feats = feats.reshape(n, n_ch * (n_quantiles + 1))
    return feats[0] if single else feats


def ecdf_features(w: Window, n_quantiles: int = DEFAULT_N_QUANTILES) -> FeatureVector:
    return FeatureVector(ecdf_matrix(w.data, n_quantiles), w.subject_id, w.start_index)
