"""Testing the utility functions."""
import os.path as op
import json
import logging

import pytest
import numpy as np
import pandas as pd

from seer_forecast.utils import (level_key, derive_seed, channel_rngs,
                                 setup_logging, make_dir, write_table)


def test_level_key():
    """Test that float levels give stable integer keys."""
    assert level_key(0.01) == 10000
    assert level_key(0.1 + 0.2) == level_key(0.3)
    assert level_key(3) == 3000000


def test_derive_seed():
    """Test reproducible, key dependent seeds."""
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(1, 3)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(0) < 2 ** 32
    with pytest.raises(ValueError, match='non-negative'):
        derive_seed(1, -4)


def test_channel_rngs():
    """Test that a channel's stream does not depend on the channel count."""
    few = [rng.random(3) for rng in channel_rngs(7, 2)]
    many = [rng.random(3) for rng in channel_rngs(7, 5)]
    for a, b in zip(few, many):
        np.testing.assert_array_equal(a, b)
    assert not np.array_equal(many[0], many[1])


def test_write_table(tmp_path):
    """Test the CSV, its sidecar and repeatable bytes."""
    df = pd.DataFrame({'metric': ['mse', 'mase'], 'value': [0.1, np.nan]})
    meanings = {'metric': {'Description': 'name'},
                'value': {'Description': 'score'}}
    fname = str(tmp_path / 'table.csv')
    write_table(df, fname, meanings)
    with open(fname) as fin:
        text = fin.read()
    assert text == 'metric,value\nmse,0.10000000000000001\nmase,n/a\n'
    with open(op.join(str(tmp_path), 'table.json')) as fin:
        assert json.load(fin) == meanings

    again = str(tmp_path / 'again.csv')
    write_table(df, again)
    with open(again) as fin:
        assert fin.read() == text
    assert not op.exists(op.join(str(tmp_path), 'again.json'))


@pytest.mark.parametrize('verbosity, level', [
    (0, logging.WARNING), (1, logging.INFO), (2, logging.DEBUG),
    (5, logging.DEBUG)])
def test_setup_logging(verbosity, level):
    """Test the levels and that handlers are not stacked."""
    logger = logging.getLogger('seer_forecast')
    previous = logger.level
    try:
        setup_logging(verbosity)
        root = setup_logging(verbosity)
        assert root is logger
        assert root.level == level
        assert len(root.handlers) == 1
    finally:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
        logger.setLevel(previous)


def test_make_dir(tmp_path):
    """Test creating nested directories twice."""
    path = op.join(str(tmp_path), 'a', 'b')
    assert make_dir(path) == path
    assert op.isdir(path)
    assert make_dir(path) == path
