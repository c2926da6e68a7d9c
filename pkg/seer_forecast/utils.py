"""Provide utility functions shared by the library and the command line.

main file: seer.py

"""
import os
import os.path as op
import json
import logging

import numpy as np

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(levelname)s %(name)s: %(message)s'


def level_key(level):
    """Turn a sweep level into an integer usable as seed entropy."""
    return int(round(float(level) * 1e6))


def derive_seed(seed, *keys):
    """Derive an independent seed from `seed` and integer `keys`.

    Parameters
    ----------
    seed : int
        Base seed.
    *keys : int
        Further entropy, e.g. a channel index or :func:`level_key` output.

    Returns
    -------
    seed : int
        A 32 bit seed. The same inputs always give the same seed.

    """
    entropy = [int(seed)] + [int(k) for k in keys]
    if any(k < 0 for k in entropy):
        raise ValueError('seed entropy must be non-negative, got {}'
                         .format(entropy))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def channel_rngs(seed, n_channels):
    """One generator per channel, each depending only on seed and index."""
    children = np.random.SeedSequence(int(seed)).spawn(n_channels)
    return [np.random.default_rng(child) for child in children]


def setup_logging(verbosity=0):
    """Send log records of this package to stderr.

    Parameters
    ----------
    verbosity : int
        0 shows warnings, 1 info and 2 or more debug messages.

    """
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity,
                                                      logging.DEBUG)
    root = logging.getLogger('seer_forecast')
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)
    return root


def make_dir(path):
    """Create directory `path` if needed and return it."""
    if not op.exists(path):
        os.makedirs(path)
    return path


def write_json(obj, fpath):
    """Dump `obj` to `fpath` with an indentation of 4 and keys in order."""
    with open(fpath, 'w') as fout:
        json.dump(obj=obj, fp=fout, sort_keys=False, indent=4)
        fout.write('\n')
    return fpath


def write_table(df, fpath, meanings=None):
    """Write a DataFrame to CSV, plus a JSON sidecar describing it.

    Floats are written with 17 significant digits and lines end in
    ``'\\n'``, so identical frames give identical files.

    Parameters
    ----------
    df : pandas.DataFrame
        The table. The index is not written.
    fpath : str
        Path of the CSV file.
    meanings : dict | None
        Column descriptions, written next to the CSV with a .json suffix.

    Returns
    -------
    fpath : str

    """
    df.to_csv(fpath, index=False, float_format='%.17g', lineterminator='\n',
              na_rep='n/a')
    if meanings is not None:
        write_json(meanings, op.splitext(fpath)[0] + '.json')
    logger.info('wrote %s', fpath)
    return fpath
