"""Testing the error measures."""
import logging

import pytest
import numpy as np

from seer_forecast.errors import ConfigError, ShapeError
from seer_forecast.metrics import (mse, mae, naive_scale, mase, msmape,
                                   metrics)


def test_mse_mae():
    """Test hand-computed squared and absolute errors."""
    prediction = np.array([[1., 2., 3.]])
    target = np.array([[1., 1., 1.]])
    assert mse(prediction, target) == pytest.approx(5. / 3.)
    assert mae(prediction, target) == 1.
    assert mse(target, target) == 0.


def test_naive_scale():
    """Test the seasonal naive error on a context."""
    context = np.array([1., 2., 4., 7.])
    assert naive_scale(context) == 2.
    assert naive_scale(context, seasonality=2) == 4.
    assert np.isnan(naive_scale(context, seasonality=4))
    # two channels are averaged together
    assert naive_scale(np.vstack([context, context * 2])) == 3.
    with pytest.raises(ConfigError, match='seasonality'):
        naive_scale(context, seasonality=0)


def test_mase(caplog):
    """Test the scaled error and its undefined case."""
    context = np.array([1., 2., 4., 7.])
    assert mase(np.array([1., 2., 3.]), np.ones(3), context) == 0.5
    with caplog.at_level(logging.WARNING, logger='seer_forecast'):
        assert np.isnan(mase(np.ones(3), np.zeros(3), np.full(5, 3.)))
    assert 'MASE undefined' in caplog.text


@pytest.mark.parametrize('prediction, target, expected', [
    (0., 0., 0.),
    (1., 0., 200. / 1.1),
    (0.1, 0., 200. * 0.1 / 0.6),
    (2., 4., 200. * 2. / 6.1),
])
def test_msmape(prediction, target, expected):
    """Test the floored denominator."""
    assert msmape(np.array([prediction]), np.array([target])) == \
        pytest.approx(expected)


def test_metrics():
    """Test the combined table and the missing context."""
    prediction = np.array([[1., 2., 3.]])
    target = np.array([[1., 1., 1.]])
    scores = metrics(prediction, target, context=np.array([1., 2., 4., 7.]))
    assert list(scores) == ['mse', 'mae', 'mase', 'msmape']
    assert scores['mase'] == 0.5
    assert np.isnan(metrics(prediction, target)['mase'])


def test_shape_errors():
    """Test mismatched and empty inputs."""
    with pytest.raises(ShapeError, match='differ in shape'):
        mae(np.ones(3), np.ones(4))
    with pytest.raises(ShapeError, match='empty'):
        mse(np.ones(0), np.ones(0))
