"""Reversible instance normalization and patch segmentation.

Lookback windows are standardized per channel before they enter the model
and predictions are mapped back with the same statistics. Patches are
non-overlapping, so a window of length T gives ceil(T / p) patches.

"""
from dataclasses import dataclass

import numpy as np

from seer_forecast import tensor as tn
from seer_forecast.define_settings import EPS_NORM, PATCH_LEN, PADDING
from seer_forecast.errors import ConfigError, DivisibilityError, ShapeError

PADDING_MODES = ('front-replicate', 'strict')


@dataclass
class NormStats:
    """Per-channel statistics of a lookback window.

    Attributes
    ----------
    mean, std : ndarray, shape (..., N)
        Mean and biased standard deviation of each channel. ``std`` may be
        0 for constant channels; ``eps`` is added wherever it is used.
    eps : float
        Stability constant added to ``std``.

    """

    mean: np.ndarray
    std: np.ndarray
    eps: float = EPS_NORM

    @property
    def n_channels(self):
        """Number of channels the statistics belong to."""
        return self.mean.shape[-1]


@dataclass
class PatchConfig:
    """Patch length and what to do when it does not divide the window."""

    patch_len: int = PATCH_LEN
    padding: str = PADDING

    def __post_init__(self):
        if int(self.patch_len) < 1:
            raise ConfigError('model.patch_len', 'must be >= 1, got {}'
                              .format(self.patch_len))
        if self.padding not in PADDING_MODES:
            raise ConfigError('model.padding', 'must be one of {}, got "{}"'
                              .format(PADDING_MODES, self.padding))
        self.patch_len = int(self.patch_len)

    def n_patches(self, length):
        """Number of patches for a window of `length` time points."""
        return int(np.ceil(length / self.patch_len))


def instance_normalize(X, eps=EPS_NORM):
    """Standardize each channel of a window over time.

    Parameters
    ----------
    X : ndarray, shape (..., N, T)
        Lookback window(s), time on the last axis.
    eps : float
        Added to the standard deviation before dividing.

    Returns
    -------
    X_norm : ndarray, shape (..., N, T)
        ``(X - mean) / (std + eps)`` per channel.
    stats : NormStats
        The statistics, needed by :func:`denormalize`.

    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[-1] < 2:
        raise ShapeError('need at least 2 time points per channel, got shape '
                         '{}'.format(X.shape))
    mean = X.mean(axis=-1)
    std = X.std(axis=-1)
    X_norm = (X - mean[..., None]) / (std[..., None] + eps)
    return X_norm, NormStats(mean=mean, std=std, eps=eps)


def denormalize(Y_norm, stats):
    """Undo :func:`instance_normalize` on predictions.

    Parameters
    ----------
    Y_norm : Tensor | ndarray, shape (..., N, F)
        Predictions on the normalized scale.
    stats : NormStats
        Statistics of the matching lookback window.

    Returns
    -------
    Y : Tensor | ndarray, shape (..., N, F)
        Same type as `Y_norm`; a Tensor keeps its gradient path.

    """
    n_channels = Y_norm.shape[-2] if len(Y_norm.shape) >= 2 else None
    if n_channels != stats.n_channels:
        raise ShapeError('predictions have {} channels, statistics have {}'
                         .format(n_channels, stats.n_channels))
    scale = (stats.std + stats.eps)[..., None]
    shift = stats.mean[..., None]
    if isinstance(Y_norm, tn.Tensor):
        return Y_norm * scale + shift
    return np.asarray(Y_norm, dtype=np.float64) * scale + shift


def make_patches(X, cfg):
    """Cut the time axis into non-overlapping patches.

    Parameters
    ----------
    X : ndarray, shape (..., T)
        Series with time on the last axis.
    cfg : PatchConfig
        Patch length and padding mode.

    Returns
    -------
    patches : ndarray, shape (..., n, p)
        ``n = ceil(T / p)``. With front-replicate padding, a window that p
        does not divide is left-padded with its first value.

    """
    X = np.asarray(X, dtype=np.float64)
    length = X.shape[-1]
    if length < 1:
        raise ShapeError('cannot patch an empty series')
    p = cfg.patch_len
    n = cfg.n_patches(length)
    pad = n * p - length
    if pad:
        if cfg.padding == 'strict':
            raise DivisibilityError('patch length {} does not divide {} time '
                                    'points'.format(p, length))
        front = np.repeat(X[..., :1], pad, axis=-1)
        X = np.concatenate([front, X], axis=-1)
    return X.reshape(X.shape[:-1] + (n, p))


def unpatch(patches, length):
    """Join patches back into a series of `length`, dropping the padding."""
    patches = np.asarray(patches)
    flat = patches.reshape(patches.shape[:-2] + (-1,))
    return flat[..., flat.shape[-1] - length:]
