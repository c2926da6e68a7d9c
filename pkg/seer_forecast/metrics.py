"""Point forecast error measures.

MASE and msMAPE follow the usual benchmark conventions. MASE divides by
the in-sample error of the seasonal naive forecast on a training context
and is NaN when that error is 0.

"""
import logging
from collections import OrderedDict

import numpy as np

from seer_forecast.define_settings import MASE_SEASONALITY, MSMAPE_EPS
from seer_forecast.errors import ShapeError, ConfigError

logger = logging.getLogger(__name__)


def _pair(prediction, target):
    prediction = np.asarray(prediction, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if prediction.shape != target.shape:
        raise ShapeError('prediction {} and target {} differ in shape'
                         .format(prediction.shape, target.shape))
    if prediction.size == 0:
        raise ShapeError('cannot score an empty forecast')
    return prediction, target


def mse(prediction, target):
    """Mean squared error."""
    prediction, target = _pair(prediction, target)
    return float(np.mean((prediction - target) ** 2))


def mae(prediction, target):
    """Mean absolute error."""
    prediction, target = _pair(prediction, target)
    return float(np.mean(np.abs(prediction - target)))


def naive_scale(context, seasonality=MASE_SEASONALITY):
    """Mean absolute error of the seasonal naive forecast on `context`.

    Parameters
    ----------
    context : array_like, shape (L,) or (N, L)
        Training series, time on the last axis.
    seasonality : int
        Lag m of the naive forecast ``y_t = y_{t-m}``.

    Returns
    -------
    scale : float
        NaN if the context has no more than m points.

    """
    if seasonality < 1:
        raise ConfigError('metrics.seasonality', 'must be >= 1, got {}'
                          .format(seasonality))
    context = np.asarray(context, dtype=np.float64)
    if context.shape[-1] <= seasonality:
        return np.nan
    diffs = context[..., seasonality:] - context[..., :-seasonality]
    return float(np.mean(np.abs(diffs)))


def mase(prediction, target, context, seasonality=MASE_SEASONALITY):
    """Mean absolute scaled error.

    Returns NaN when the naive scale is 0 or undefined.

    """
    scale = naive_scale(context, seasonality)
    if not np.isfinite(scale) or scale == 0:
        logger.warning('seasonal naive scale is %s, MASE undefined', scale)
        return np.nan
    return mae(prediction, target) / scale


def msmape(prediction, target, eps=MSMAPE_EPS):
    """Symmetric MAPE in percent with a floored denominator.

    ``mean(200 |p - y| / max(|p| + |y| + eps, 0.5 + eps))``

    """
    prediction, target = _pair(prediction, target)
    denominator = np.maximum(np.abs(prediction) + np.abs(target) + eps,
                             0.5 + eps)
    return float(np.mean(200. * np.abs(prediction - target) / denominator))


def metrics(prediction, target, context=None, seasonality=MASE_SEASONALITY,
            eps=MSMAPE_EPS):
    """Compute all error measures.

    Parameters
    ----------
    prediction, target : array_like
        Same shape.
    context : array_like | None
        Training series for the MASE scale; without it MASE is NaN.
    seasonality : int
    eps : float

    Returns
    -------
    scores : OrderedDict
        Keys mse, mae, mase and msmape.

    """
    scores = OrderedDict()
    scores['mse'] = mse(prediction, target)
    scores['mae'] = mae(prediction, target)
    if context is None:
        scores['mase'] = np.nan
    else:
        scores['mase'] = mase(prediction, target, context, seasonality)
    scores['msmape'] = msmape(prediction, target, eps)
    return scores
