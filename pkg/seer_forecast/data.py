"""Read and write multivariate series, split them and cut windows.

CSV files have a header row, a first column holding a timestamp or an
index, and one numeric column per channel. Missing cells are read as 0.

"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from seer_forecast.define_settings import SPLIT_RATIOS, WINDOW_STRIDE
from seer_forecast.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

SPLIT_NAMES = ('train', 'val', 'test')

# year-month-day at the start of a label
DATE_PATTERN = r'\d{4}[-/]\d{1,2}[-/]\d{1,2}'


@dataclass
class TimeSeriesFrame:
    """A multivariate series with channels on the first axis.

    Attributes
    ----------
    names : list of str
        Channel names.
    values : ndarray, shape (N, L)
    index : pandas.Index
        Labels of the L time points, as read from the first column.
    index_name : str
        Header of the first column.
    freq : str
        Frequency label, free text ('' if unknown).
    ratios : tuple of float
        Train, validation and test shares.

    """

    names: list
    values: np.ndarray
    index: pd.Index = None
    index_name: str = 'date'
    freq: str = ''
    ratios: tuple = field(default=SPLIT_RATIOS)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError('values must be 2-D (channels x time), got shape '
                            '{}'.format(self.values.shape))
        if len(self.names) != self.values.shape[0]:
            raise DataError('{} names for {} channels'
                            .format(len(self.names), self.values.shape[0]))
        if self.index is None:
            self.index = pd.RangeIndex(self.values.shape[1])
        if len(self.index) != self.values.shape[1]:
            raise DataError('index has {} labels for {} time points'
                            .format(len(self.index), self.values.shape[1]))

    @property
    def n_channels(self):
        """Number of channels N."""
        return self.values.shape[0]

    @property
    def length(self):
        """Number of time points L."""
        return self.values.shape[1]

    def take(self, start, stop):
        """Return the time points ``start:stop`` as a new frame."""
        return TimeSeriesFrame(names=list(self.names),
                               values=self.values[:, start:stop],
                               index=self.index[start:stop],
                               index_name=self.index_name, freq=self.freq,
                               ratios=self.ratios)

    def with_values(self, values):
        """Return a frame with the same labels and new values."""
        return TimeSeriesFrame(names=list(self.names), values=values,
                               index=self.index, index_name=self.index_name,
                               freq=self.freq, ratios=self.ratios)

    def to_dataframe(self):
        """Time-major pandas DataFrame, as written to CSV."""
        df = pd.DataFrame(self.values.T, columns=self.names,
                          index=pd.Index(self.index, name=self.index_name))
        return df


def _infer_freq(index):
    if index.dtype != object or len(index) < 3:
        return ''
    if not index.astype(str).str.match(DATE_PATTERN).all():
        return ''
    try:
        stamps = pd.to_datetime(index)
        return pd.infer_freq(stamps) or ''
    except (ValueError, TypeError):
        return ''


def load_csv(fname, ratios=SPLIT_RATIOS):
    """Read a CSV file into a :class:`TimeSeriesFrame`.

    Parameters
    ----------
    fname : str
        Path of the CSV file.
    ratios : tuple of float
        Split shares stored on the frame.

    Returns
    -------
    frame : TimeSeriesFrame

    Raises
    ------
    DataError
        If the file has fewer than 2 columns or a cell is not a number.
        The message gives the file line and the column name.

    """
    try:
        df = pd.read_csv(fname, index_col=0, dtype=str, keep_default_na=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise DataError('cannot read "{}": {}'.format(fname, err))
    if df.shape[1] < 1:
        raise DataError('"{}" needs an index column and at least one channel, '
                        'found {} column(s)'.format(fname, df.shape[1] + 1))

    # float() is exact to the last bit, pd.to_numeric is not
    values = np.empty((df.shape[1], df.shape[0]), dtype=np.float64)
    for col, name in enumerate(df.columns):
        for row, cell in enumerate(df.iloc[:, col].values):
            try:
                values[col, row] = np.nan if pd.isna(cell) else float(cell)
            except ValueError:
                # +2: header line and 1-based lines
                raise DataError('"{}" line {}, column "{}": cannot parse '
                                '"{}"'.format(fname, row + 2, name, cell))

    missing = np.isnan(values)
    n_missing = int(missing.sum())
    if n_missing:
        logger.info('replaced %d missing value(s) by 0 in %s',
                    n_missing, fname)
        values[missing] = 0.
    return TimeSeriesFrame(names=[str(c) for c in df.columns], values=values,
                           index=df.index,
                           index_name=df.index.name or 'date',
                           freq=_infer_freq(df.index), ratios=tuple(ratios))


def save_csv(frame, fname):
    """Write `frame` to CSV with 17 significant digits.

    Values survive a :func:`load_csv` round trip exactly.

    """
    frame.to_dataframe().to_csv(fname, float_format='%.17g',
                                lineterminator='\n')
    return fname


def check_ratios(ratios):
    """Validate train, val and test shares and return them as floats."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigError('data.split', 'need three non-negative shares, got '
                          '{}'.format(ratios))
    if abs(sum(ratios) - 1.) > 1e-9:
        raise ConfigError('data.split', 'shares must sum to 1, got {}'
                          .format(sum(ratios)))
    return ratios


def split_lengths(length, ratios):
    """Lengths of the train, val and test parts of a series of `length`."""
    ratios = check_ratios(ratios)
    n_train = int(np.floor(length * ratios[0] + 1e-9))
    n_val = int(np.floor(length * ratios[1] + 1e-9))
    return n_train, n_val, length - n_train - n_val


def split(frame, ratios=None, min_length=None):
    """Cut `frame` chronologically into train, val and test frames.

    Parameters
    ----------
    frame : TimeSeriesFrame
    ratios : tuple of float | None
        Defaults to ``frame.ratios``. Train and val get ``floor(L * r)``
        points, test gets the rest.
    min_length : int | None
        If given, every part must be at least this long (T + F).

    Returns
    -------
    parts : tuple of TimeSeriesFrame
        (train, val, test); their concatenation is `frame`.

    """
    ratios = frame.ratios if ratios is None else ratios
    lengths = split_lengths(frame.length, ratios)
    if min_length is not None:
        for name, n in zip(SPLIT_NAMES, lengths):
            if n < min_length:
                raise DataError('{} part has {} time points, needs at least '
                                '{} (lookback + horizon)'
                                .format(name, n, min_length))
    bounds = np.cumsum((0,) + lengths)
    return tuple(frame.take(start, stop)
                 for start, stop in zip(bounds[:-1], bounds[1:]))


@dataclass
class WindowPair:
    """A lookback window and the target that follows it.

    ``X`` (N, T) and ``Y`` (N, F) are views into the frame's values, so
    they change if the frame is modified. ``origin`` is the index of the
    first lookback time point.

    """

    X: np.ndarray
    Y: np.ndarray
    origin: int


def n_windows(length, lookback, horizon, stride=WINDOW_STRIDE):
    """Number of windows, ``floor((L - T - F) / stride) + 1`` or 0."""
    if stride < 1:
        raise ConfigError('data.stride', 'must be >= 1, got {}'.format(stride))
    span = length - lookback - horizon
    return span // stride + 1 if span >= 0 else 0


def windows(frame, lookback, horizon, stride=WINDOW_STRIDE):
    """All (lookback, target) pairs of `frame`, none dropped.

    Returns
    -------
    pairs : list of WindowPair
        Empty if the frame is shorter than ``lookback + horizon``.

    """
    values = frame.values
    pairs = list()
    for k in range(n_windows(frame.length, lookback, horizon, stride)):
        origin = k * stride
        pairs.append(WindowPair(
            X=values[:, origin:origin + lookback],
            Y=values[:, origin + lookback:origin + lookback + horizon],
            origin=origin))
    return pairs


def window_arrays(frame, lookback, horizon, stride=WINDOW_STRIDE):
    """Stack the windows of `frame` into arrays.

    Returns
    -------
    X : ndarray, shape (B, N, T)
    Y : ndarray, shape (B, N, F)
    origins : ndarray of int, shape (B,)

    """
    count = n_windows(frame.length, lookback, horizon, stride)
    N = frame.n_channels
    if count == 0:
        return (np.zeros((0, N, lookback)), np.zeros((0, N, horizon)),
                np.zeros(0, dtype=int))
    view = np.lib.stride_tricks.sliding_window_view(
        frame.values, lookback + horizon, axis=1)[:, ::stride][:, :count]
    stacked = np.ascontiguousarray(view.transpose(1, 0, 2))
    origins = np.arange(count) * stride
    return stacked[..., :lookback], stacked[..., lookback:], origins
