"""Corrupt series with noise, anomalies, missing values or shifts.

All functions take a series of shape (T, N), time first, and return a
corrupted copy; the input is never modified. Offsets scale with the
biased standard deviation of each clean channel, so a constant channel
only changes under the missing-value corruption.

Every channel draws from its own generator, derived from the seed and the
channel index, so channels do not depend on each other.

"""
import logging
import dataclasses
from dataclasses import dataclass

import numpy as np
import pandas as pd

from seer_forecast.define_settings import (NOISE_SCALE, ANOMALY_SEGMENT_LEN,
                                           OUTLIER_RATIO, ANOMALY_SCALE,
                                           MISSING_SEGMENT_LEN, SHIFT_SCALE,
                                           PERTURBATION_KINDS, DEFAULT_GRIDS,
                                           PERTURB_APPLY_TO)
from seer_forecast.errors import ConfigError, ShapeError
from seer_forecast.utils import channel_rngs, derive_seed, level_key

logger = logging.getLogger(__name__)

# the parameter each kind is swept over
LEVEL_FIELDS = {'white-noise': 'r_noise',
                'anomalies': 'r_cont',
                'missing': 'r_miss',
                'distribution-shift': 'k_shift'}

APPLY_TO = ('full', 'train')


@dataclass
class PerturbationSpec:
    """One corruption recipe.

    Attributes
    ----------
    kind : str
        'white-noise', 'anomalies', 'missing' or 'distribution-shift'.
    r_noise, alpha_noise : float
        Share of noisy points and noise scale in channel stds.
    r_cont : float
        Share of points covered by anomalous segments.
    len_cont : int
        Length of an anomalous segment.
    r_out : float
        Share of point outliers.
    alpha_anom : float
        Anomaly offset in channel stds.
    r_miss : float
        Share of points covered by missing segments.
    len_miss : int
        Length of a missing segment.
    k_shift : int
        Number of shifted blocks; 0 leaves the series clean.
    alpha_shift : float
        Largest block offset in channel stds.
    seed : int

    """

    kind: str = 'white-noise'
    r_noise: float = 0.
    alpha_noise: float = NOISE_SCALE
    r_cont: float = 0.
    len_cont: int = ANOMALY_SEGMENT_LEN
    r_out: float = OUTLIER_RATIO
    alpha_anom: float = ANOMALY_SCALE
    r_miss: float = 0.
    len_miss: int = MISSING_SEGMENT_LEN
    k_shift: int = 1
    alpha_shift: float = SHIFT_SCALE
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ConfigError('perturbation.kind', 'must be one of {}, got '
                              '"{}"'.format(PERTURBATION_KINDS, self.kind))
        for name in ('r_noise', 'r_cont', 'r_out', 'r_miss'):
            value = getattr(self, name)
            if not 0. <= value <= 1.:
                raise ConfigError('perturbation.' + name, 'must be in [0, 1], '
                                  'got {}'.format(value))
        for name in ('alpha_noise', 'alpha_anom', 'alpha_shift'):
            if getattr(self, name) < 0:
                raise ConfigError('perturbation.' + name, 'must be >= 0, got '
                                  '{}'.format(getattr(self, name)))
        for name in ('len_cont', 'len_miss'):
            if getattr(self, name) < 1:
                raise ConfigError('perturbation.' + name, 'must be >= 1, got '
                                  '{}'.format(getattr(self, name)))
        if self.k_shift < 0:
            raise ConfigError('perturbation.k_shift', 'must be >= 0, got {}'
                              .format(self.k_shift))

    @property
    def level(self):
        """Value of the parameter this kind is swept over."""
        return getattr(self, LEVEL_FIELDS[self.kind])

    def at_level(self, level, seed=None):
        """Copy with the swept parameter set to `level`."""
        if self.kind == 'distribution-shift':
            if float(level) != int(level):
                raise ConfigError('perturbation.k_shift', 'must be an '
                                  'integer, got {}'.format(level))
            level = int(level)
        changes = {LEVEL_FIELDS[self.kind]: level}
        if seed is not None:
            changes['seed'] = seed
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        """Return the fields as a plain dict."""
        return dataclasses.asdict(self)


def _as_series(X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError('expected a series of shape (T, N), got {}'
                         .format(X.shape))
    return X


def _n_points(length, ratio):
    # guards against 100 * 0.29 = 28.999...
    return int(np.floor(length * ratio + 1e-9))


def _n_segments(length, ratio, seg_len):
    if seg_len > length:
        return 0
    return int(np.floor(length * ratio / seg_len + 1e-9))


def _signs(rng, size):
    return rng.choice(np.array([-1., 1.]), size=size)


def inject_white_noise(X, r_noise, alpha_noise=NOISE_SCALE, seed=0):
    """Add Gaussian noise to a random share of the points of every channel.

    Each channel gets ``floor(T * r_noise)`` distinct positions, sampled
    without replacement, and ``N(0, (alpha_noise * sigma_c)^2)`` noise there.

    Parameters
    ----------
    X : ndarray, shape (T, N)
    r_noise : float
        In [0, 1].
    alpha_noise : float
    seed : int

    Returns
    -------
    X_noisy : ndarray, shape (T, N)

    """
    X = _as_series(X)
    X_noisy = X.copy()
    T, N = X.shape
    n_noise = _n_points(T, r_noise)
    if n_noise == 0:
        return X_noisy
    sigma = X.std(axis=0)
    for c, rng in enumerate(channel_rngs(seed, N)):
        idx = rng.choice(T, size=n_noise, replace=False)
        X_noisy[idx, c] += rng.normal(0., alpha_noise * sigma[c],
                                      size=n_noise)
    return X_noisy


def inject_anomalies(X, r_cont, len_cont=ANOMALY_SEGMENT_LEN,
                     r_out=OUTLIER_RATIO, alpha_anom=ANOMALY_SCALE, seed=0):
    """Add shifted segments and point outliers.

    Every channel gets ``floor(T * r_cont / len_cont)`` segments whose
    starts are drawn with replacement from ``[0, T - len_cont]``. Each
    segment is offset by ``+-alpha_anom * sigma_c`` with a random sign;
    segments may overlap. Then ``floor(T * r_out)`` distinct points per
    channel get the same kind of offset.

    Returns
    -------
    X_noisy : ndarray, shape (T, N)

    """
    X = _as_series(X)
    X_noisy = X.copy()
    T, N = X.shape
    n_segments = _n_segments(T, r_cont, len_cont)
    n_out = _n_points(T, r_out)
    if n_segments == 0 and n_out == 0:
        return X_noisy
    sigma = X.std(axis=0)
    for c, rng in enumerate(channel_rngs(seed, N)):
        delta = alpha_anom * sigma[c]
        if n_segments:
            starts = rng.integers(0, T - len_cont + 1, size=n_segments)
            for start, sign in zip(starts, _signs(rng, n_segments)):
                X_noisy[start:start + len_cont, c] += sign * delta
        idx = rng.choice(T, size=n_out, replace=False)
        X_noisy[idx, c] += _signs(rng, n_out) * delta
    return X_noisy


def inject_missing(X, r_miss, len_miss=MISSING_SEGMENT_LEN, seed=0):
    """Set ``floor(T * r_miss / len_miss)`` segments per channel to 0.

    Starts are drawn with replacement from ``[0, T - len_miss]``, so
    segments may overlap.

    Returns
    -------
    X_noisy : ndarray, shape (T, N)

    """
    X = _as_series(X)
    X_noisy = X.copy()
    T, N = X.shape
    n_segments = _n_segments(T, r_miss, len_miss)
    if n_segments == 0:
        return X_noisy
    for c, rng in enumerate(channel_rngs(seed, N)):
        for start in rng.integers(0, T - len_miss + 1, size=n_segments):
            X_noisy[start:start + len_miss, c] = 0.
    return X_noisy


def inject_distribution_shift(X, k_shift, alpha_shift=SHIFT_SCALE, seed=0):
    """Offset consecutive blocks of every channel by random amounts.

    The time axis is cut into `k_shift` blocks of ``floor(T / k_shift)``
    points; block k covers ``[k * L, min((k + 1) * L, T))``. Points after
    the last block keep their value. Each block is shifted by
    ``Uniform(-alpha_shift, alpha_shift) * sigma_c``.

    Parameters
    ----------
    X : ndarray, shape (T, N)
    k_shift : int
        At least 1.
    alpha_shift : float
    seed : int

    Returns
    -------
    X_noisy : ndarray, shape (T, N)

    """
    X = _as_series(X)
    if int(k_shift) != k_shift or k_shift < 1:
        raise ConfigError('perturbation.k_shift', 'must be an integer >= 1, '
                          'got {}'.format(k_shift))
    k_shift = int(k_shift)
    X_noisy = X.copy()
    T, N = X.shape
    block = T // k_shift
    sigma = X.std(axis=0)
    for c, rng in enumerate(channel_rngs(seed, N)):
        deltas = rng.uniform(-alpha_shift, alpha_shift, size=k_shift)
        for k, delta in enumerate(deltas):
            X_noisy[k * block:min((k + 1) * block, T), c] += delta * sigma[c]
    return X_noisy


def apply_perturbation(X, spec):
    """Corrupt `X` (T, N) as described by a :class:`PerturbationSpec`.

    A distribution shift with ``k_shift == 0`` returns a copy of `X`.

    """
    if spec.kind == 'white-noise':
        return inject_white_noise(X, spec.r_noise, spec.alpha_noise,
                                  spec.seed)
    elif spec.kind == 'anomalies':
        return inject_anomalies(X, spec.r_cont, spec.len_cont, spec.r_out,
                                spec.alpha_anom, spec.seed)
    elif spec.kind == 'missing':
        return inject_missing(X, spec.r_miss, spec.len_miss, spec.seed)
    if spec.k_shift == 0:
        return _as_series(X).copy()
    return inject_distribution_shift(X, spec.k_shift, spec.alpha_shift,
                                     spec.seed)


def apply_to_series(X, spec, apply_to=PERTURB_APPLY_TO, n_train=None):
    """Corrupt the whole series or only its first `n_train` points.

    Parameters
    ----------
    X : ndarray, shape (T, N)
    spec : PerturbationSpec
    apply_to : str
        'full' or 'train'.
    n_train : int | None
        Length of the training part; needed for 'train'.

    """
    if apply_to not in APPLY_TO:
        raise ConfigError('perturbation.apply_to', 'must be one of {}, got '
                          '"{}"'.format(APPLY_TO, apply_to))
    X = _as_series(X)
    if apply_to == 'full':
        return apply_perturbation(X, spec)
    if n_train is None:
        raise ValueError('corrupting the training part needs its length')
    X_noisy = X.copy()
    X_noisy[:n_train] = apply_perturbation(X[:n_train], spec)
    return X_noisy


def perturbation_report(X, X_noisy, names=None):
    """Count the changed points of every channel.

    Returns
    -------
    report : pandas.DataFrame
        Columns channel, modified (points that differ) and zeroed (points
        that are 0 now and were not before).

    """
    X = _as_series(X)
    X_noisy = _as_series(X_noisy)
    if X.shape != X_noisy.shape:
        raise ShapeError('clean {} and corrupted {} series differ in shape'
                         .format(X.shape, X_noisy.shape))
    if names is None:
        names = [str(c) for c in range(X.shape[1])]
    changed = X_noisy != X
    zeroed = (X_noisy == 0) & (X != 0)
    report = pd.DataFrame({'channel': list(names),
                           'modified': changed.sum(axis=0),
                           'zeroed': zeroed.sum(axis=0)})
    logger.debug('modified points per channel: %s',
                 report['modified'].tolist())
    return report


def sweep(X, kind, grid=None, fixed=None, seed=0):
    """Corrupt `X` once per level of a grid.

    Parameters
    ----------
    X : ndarray, shape (T, N)
    kind : str
        One of the perturbation kinds.
    grid : sequence | None
        Levels of the swept parameter; defaults to the standard grid of
        `kind`. Level 0 yields an exact copy of `X`.
    fixed : PerturbationSpec | dict | None
        Values of the parameters that are not swept.
    seed : int
        Level l is corrupted with a seed derived from (seed, l).

    Returns
    -------
    results : list of tuple
        ``(level, X_noisy)`` in grid order.

    """
    X = _as_series(X)
    grid = DEFAULT_GRIDS.get(kind) if grid is None else grid
    if grid is None or len(grid) == 0:
        raise ConfigError('robustbench.grid', 'needs at least one level')
    if isinstance(fixed, PerturbationSpec):
        base = dataclasses.replace(fixed, kind=kind)
    else:
        base = PerturbationSpec(kind=kind, **(fixed or dict()))

    results = list()
    for level in grid:
        if level == 0:
            results.append((level, X.copy()))
            continue
        spec = base.at_level(level, seed=derive_seed(seed, level_key(level)))
        results.append((level, apply_perturbation(X, spec)))
    return results
