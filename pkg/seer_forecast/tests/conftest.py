"""Shared fixtures: seeded series, small model configs and run configs."""
import os.path as op

import pytest
import numpy as np
import pandas as pd

from seer_forecast.data import TimeSeriesFrame, save_csv
from seer_forecast.verify import toy_model_config

# a model small enough to train in seconds
SMALL_RUN = """seed = {seed}

[data]
path = {path}
split = 0.6, 0.2, 0.2
lookback = 16
horizons = {horizons}

[model]
patch_len = 4
d_model = 8
tau = 0.5

[moe]
n_experts = 4
top_k = 2

[attention]
n_heads = 2

[training]
epochs = {epochs}
batch_size = 16
lr = 0.005
patience = 3
"""


def make_sine_frame(length=300, n_channels=2, period=24, noise=0.,
                    seed=0, offset=0.):
    """Sine waves with a per-channel phase, offset and amplitude.

    `offset` is added to every channel.

    """
    rng = np.random.default_rng(seed)
    t = np.arange(length)
    rows = list()
    for c in range(n_channels):
        wave = (1. + c) * np.sin(2 * np.pi * t / period + c) + 2. * c + offset
        rows.append(wave + noise * rng.standard_normal(length))
    index = pd.Index(['t{:04d}'.format(i) for i in t], name='date')
    return TimeSeriesFrame(names=['ch{}'.format(c) for c in range(n_channels)],
                           values=np.array(rows), index=index)


@pytest.fixture
def sine_frame():
    """Two noisy sine channels of 300 points."""
    return make_sine_frame(noise=0.05)


@pytest.fixture
def sine_csv(tmp_path, sine_frame):
    """The sine frame written to CSV."""
    fname = str(tmp_path / 'sine.csv')
    save_csv(sine_frame, fname)
    return fname


@pytest.fixture
def toy_cfg():
    """The toy configuration of the gradient check."""
    return toy_model_config(seed=0)


@pytest.fixture
def run_ini(tmp_path, sine_csv):
    """Return a function writing a small run config next to the data."""
    def _write(name='run.ini', seed=1, horizons='4', epochs=2, extra=''):
        fname = str(tmp_path / name)
        with open(fname, 'w') as fout:
            fout.write(SMALL_RUN.format(seed=seed, path=op.basename(sine_csv),
                                        horizons=horizons, epochs=epochs))
            fout.write(extra)
        return fname
    return _write
