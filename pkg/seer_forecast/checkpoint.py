"""Versioned checkpoint files holding one trained model per horizon.

A checkpoint is a zip archive that ``numpy.load`` opens like any ``.npz``
file. Its members are

``__format__``
    the string ``'seer-checkpoint'``
``__version__``
    the integer format version
``__config__``
    JSON of the :class:`ModelConfig` shared by all horizons
``__horizons__``
    int array of the horizons held
``h{F}/{parameter path}``
    one array per parameter of the model for horizon F

All zip entries carry the same fixed timestamp, so saving the same models
twice gives byte-identical files.

"""
import io
import json
import logging
import os.path as op
import zipfile

import numpy as np

from seer_forecast.define_settings import CHECKPOINT_FORMAT, CHECKPOINT_VERSION
from seer_forecast.errors import CheckpointError, ConfigError, ShapeError
from seer_forecast.predictor import ModelConfig, SeerModel

logger = logging.getLogger(__name__)

ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def _write_array(archive, name, array):
    info = zipfile.ZipInfo(name + '.npy', date_time=ZIP_DATE)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    buffer = io.BytesIO()
    np.lib.format.write_array(buffer, np.asanyarray(array),
                              allow_pickle=False)
    archive.writestr(info, buffer.getvalue())


def save_checkpoint(fname, models):
    """Write models for one or more horizons to `fname`.

    Parameters
    ----------
    fname : str
        Output path, conventionally ending in ``.npz``.
    models : dict
        Horizon -> :class:`SeerModel`. All models must share their
        configuration apart from the horizon.

    Returns
    -------
    fname : str

    """
    if not models:
        raise CheckpointError('no models to save')
    horizons = sorted(int(h) for h in models)
    shared = None
    for horizon in horizons:
        model = models[horizon]
        if model.cfg.horizon != horizon:
            raise CheckpointError('model stored under horizon {} predicts {} '
                                  'steps'.format(horizon, model.cfg.horizon))
        cfg = model.cfg.to_dict()
        cfg.pop('horizon')
        if shared is None:
            shared = cfg
        elif cfg != shared:
            raise CheckpointError('models for different horizons must share '
                                  'their configuration')

    with zipfile.ZipFile(fname, 'w') as archive:
        _write_array(archive, '__format__', np.array(CHECKPOINT_FORMAT))
        _write_array(archive, '__version__', np.array(CHECKPOINT_VERSION))
        _write_array(archive, '__config__',
                     np.array(json.dumps(shared, sort_keys=True)))
        _write_array(archive, '__horizons__', np.array(horizons, dtype=int))
        for horizon in horizons:
            for name, values in models[horizon].state_dict().items():
                _write_array(archive, 'h{}/{}'.format(horizon, name), values)
    logger.info('saved checkpoint with horizons %s to %s', horizons, fname)
    return fname


def load_checkpoint(fname):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns
    -------
    models : dict
        Horizon -> :class:`SeerModel` with the stored parameters.

    Raises
    ------
    CheckpointError
        If the file is missing, not a checkpoint, of an unknown version,
        or lacks parameters.

    """
    if not op.exists(fname):
        raise CheckpointError('checkpoint "{}" does not exist'.format(fname))
    try:
        archive = np.load(fname, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as err:
        raise CheckpointError('cannot read checkpoint "{}": {}'
                              .format(fname, err))
    with archive:
        keys = set(archive.files)
        for required in ('__format__', '__version__', '__config__',
                         '__horizons__'):
            if required not in keys:
                raise CheckpointError('"{}" has no {} entry'
                                      .format(fname, required))
        if str(archive['__format__']) != CHECKPOINT_FORMAT:
            raise CheckpointError('"{}" is not a checkpoint'.format(fname))
        version = int(archive['__version__'])
        if version != CHECKPOINT_VERSION:
            raise CheckpointError('checkpoint version {} is not supported, '
                                  'expected {}'
                                  .format(version, CHECKPOINT_VERSION))
        try:
            shared = json.loads(str(archive['__config__']))
        except ValueError as err:
            raise CheckpointError('bad config in "{}": {}'.format(fname, err))

        models = dict()
        for horizon in archive['__horizons__'].tolist():
            prefix = 'h{}/'.format(horizon)
            state = {key[len(prefix):]: archive[key]
                     for key in sorted(keys) if key.startswith(prefix)}
            try:
                cfg = ModelConfig.from_dict(dict(shared, horizon=horizon))
                model = SeerModel(cfg)
                model.load_state_dict(state)
            except (ConfigError, ShapeError) as err:
                raise CheckpointError('horizon {} in "{}": {}'
                                      .format(horizon, fname, err))
            models[horizon] = model
    return models


def select_horizons(models, horizons):
    """Pick the models for `horizons`.

    Raises
    ------
    CheckpointError
        Listing the available horizons if any requested one is missing.

    """
    missing = [h for h in horizons if h not in models]
    if missing:
        raise CheckpointError('horizon(s) {} not in checkpoint, available: {}'
                              .format(missing, sorted(models)))
    return {h: models[h] for h in horizons}
