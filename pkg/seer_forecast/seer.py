"""Command line entry point: train, evaluate, corrupt, sweep and verify.

Usage::

    seer train --config run.ini
    seer eval --config run.ini --checkpoint seer_output/checkpoint.npz
    seer perturb in.csv out.csv --perturb-kind missing --level 0.05 --seed 1
    seer robustbench --config run.ini --tau 0.5 0
    seer verify

Exit codes are 0 on success, 1 if a verification check fails or a metric
is not finite, and 2 for invalid configuration, data or checkpoints.

"""
import sys
import os.path as op
import argparse
import logging
import dataclasses
from collections import OrderedDict

import numpy as np
import pandas as pd

import seer_forecast
from seer_forecast.checkpoint import (save_checkpoint, load_checkpoint,
                                      select_horizons)
from seer_forecast.config import (load_run_config, write_run_config,
                                  resolve_output_dir)
from seer_forecast.data import (load_csv, save_csv, split, split_lengths,
                                window_arrays)
from seer_forecast.define_settings import (METRICS, PERTURBATION_KINDS,
                                           ROBUSTBENCH_METRICS)
from seer_forecast.define_variable_meanings import (
    make_metrics_json_dict, make_loss_trace_json_dict,
    make_robustbench_json_dict, make_perturb_report_json_dict,
    make_verify_json_dict)
from seer_forecast.errors import (ConfigError, DataError, CheckpointError,
                                  DivisibilityError, NonFiniteError)
from seer_forecast.metrics import metrics
from seer_forecast.perturb import (PerturbationSpec, APPLY_TO,
                                   apply_to_series, perturbation_report,
                                   sweep)
from seer_forecast.predictor import SeerModel, forecast, train
from seer_forecast.preprocess import instance_normalize
from seer_forecast.utils import (derive_seed, make_dir, setup_logging,
                                 write_table)
from seer_forecast.verify import CHECKS, run_checks

logger = logging.getLogger(__name__)

CHECKPOINT_FNAME = 'checkpoint.npz'
CONFIG_FNAME = 'config.ini'


def _overrides(args, **extra):
    """Collect the config values given as flags."""
    overrides = OrderedDict()
    overrides['seed'] = getattr(args, 'seed', None)
    data = getattr(args, 'data', None)
    overrides['data.path'] = op.abspath(data) if data else None
    overrides['data.horizons'] = getattr(args, 'horizons', None)
    overrides.update(extra)
    return overrides


def _read_config(args, **extra):
    cfg = load_run_config(args.config, _overrides(args, **extra))
    logger.debug('resolved config from %s', cfg.source or 'flags')
    return cfg


def _read_data(cfg):
    if cfg.data_path is None:
        raise ConfigError('data.path', 'is required for this command, set '
                          'it in the config or pass --data')
    return load_csv(cfg.data_path, cfg.split)


def _output_dir(args, cfg=None):
    return make_dir(resolve_output_dir(getattr(args, 'out', None), cfg))


def fit_horizon(frame, cfg, horizon, tau=None):
    """Train one model for `horizon` on the train and val parts of `frame`.

    The parameters are initialized from the config seed; shuffling and
    training noise use a seed derived from it and the horizon, so every
    call with the same inputs gives the same model.

    Returns
    -------
    model : SeerModel
    result : TrainResult

    """
    model = SeerModel(cfg.model_config(horizon, tau))
    train_part, val_part, _ = split(frame, cfg.split,
                                    min_length=cfg.lookback + horizon)
    X, Y, _ = window_arrays(train_part, cfg.lookback, horizon, cfg.stride)
    X_val, Y_val, _ = window_arrays(val_part, cfg.lookback, horizon,
                                    cfg.stride)
    logger.info('horizon %d: %d training and %d validation windows',
                horizon, len(X), len(X_val))
    result = train(model, (X, Y), (X_val, Y_val), epochs=cfg.epochs,
                   batch_size=cfg.batch_size, lr=cfg.lr,
                   seed=derive_seed(cfg.seed, horizon),
                   patience=cfg.patience)
    return model, result


def score_model(model, cfg, inputs, targets=None, names=ROBUSTBENCH_METRICS):
    """Score `model` on the test part.

    Parameters
    ----------
    model : SeerModel
    cfg : RunConfig
        Provides split, stride, scale and metric settings.
    inputs : TimeSeriesFrame
        Series the lookback windows are cut from.
    targets : TimeSeriesFrame | None
        Series the targets are cut from; defaults to `inputs`. Must have
        the same length.
    names : tuple of str
        Metrics to keep.

    Returns
    -------
    scores : OrderedDict
        Metric name -> value.
    n_windows : int

    """
    targets = inputs if targets is None else targets
    lookback = model.cfg.lookback
    horizon = model.cfg.horizon
    min_length = lookback + horizon
    train_part, _, test_inputs = split(inputs, cfg.split,
                                       min_length=min_length)
    _, _, test_targets = split(targets, cfg.split, min_length=min_length)
    X, _, _ = window_arrays(test_inputs, lookback, horizon, cfg.stride)
    _, Y, _ = window_arrays(test_targets, lookback, horizon, cfg.stride)
    prediction = forecast(model, X, cfg.batch_size)

    context = train_part.values
    if cfg.scale == 'normalized':
        _, stats = instance_normalize(X)
        mean = stats.mean[..., None]
        scale = (stats.std + stats.eps)[..., None]
        prediction = (prediction - mean) / scale
        Y = (Y - mean) / scale
        context, _ = instance_normalize(context)
    scores = metrics(prediction, Y, context, cfg.seasonality,
                     cfg.msmape_eps)
    return OrderedDict((name, scores[name]) for name in names), len(X)


def cmd_train(args):
    """Train one model per horizon and write checkpoint, trace and config."""
    cfg = _read_config(args, **{'model.tau': args.tau})
    frame = _read_data(cfg)
    out_dir = _output_dir(args, cfg)

    models = OrderedDict()
    traces = list()
    for horizon in cfg.horizons:
        model, result = fit_horizon(frame, cfg, horizon)
        models[horizon] = model
        trace = result.trace.copy()
        trace.insert(0, 'horizon', horizon)
        traces.append(trace)
        if len(trace):
            logger.info('horizon %d: best epoch %d, val loss %.6f', horizon,
                        result.best_epoch, trace['val_loss'].min())

    save_checkpoint(op.join(out_dir, CHECKPOINT_FNAME), models)
    write_table(pd.concat(traces, ignore_index=True),
                op.join(out_dir, 'loss_trace.csv'),
                make_loss_trace_json_dict())
    write_run_config(cfg, op.join(out_dir, CONFIG_FNAME))
    return 0


def cmd_eval(args):
    """Score a checkpoint on the test split of a dataset."""
    extra = dict()
    if args.config is None and args.seed is None:
        # inference draws no random numbers
        extra['seed'] = 0
    cfg = _read_config(args, **extra)
    frame = _read_data(cfg)
    models = load_checkpoint(args.checkpoint)
    if args.horizons:
        horizons = args.horizons
    elif args.config is not None:
        horizons = cfg.horizons
    else:
        horizons = sorted(models)
    models = select_horizons(models, horizons)
    out_dir = _output_dir(args, cfg)

    rows = list()
    failed = False
    for horizon, model in models.items():
        scores, count = score_model(model, cfg, frame, names=args.metrics)
        for name, value in scores.items():
            rows.append((horizon, name, value, cfg.scale, count))
            if name in ('mse', 'mae') and not np.isfinite(value):
                logger.error('horizon %d: %s is %s', horizon, name, value)
                failed = True
        logger.info('horizon %d: %s', horizon, ', '.join(
            '{} {:.6g}'.format(name, value) for name, value in scores.items()))

    table = pd.DataFrame(rows, columns=['horizon', 'metric', 'value',
                                        'scale', 'n_windows'])
    write_table(table, op.join(out_dir, 'metrics.csv'),
                make_metrics_json_dict())
    return 1 if failed else 0


def cmd_perturb(args):
    """Write a corrupted copy of a CSV file and a per-channel report."""
    cfg = _read_config(args, **{'perturbation.kind': args.perturb_kind,
                                'perturbation.apply_to': args.apply_to})
    if cfg.perturbation is None:
        raise ConfigError('perturbation.kind', 'is required, set it in the '
                          'config or pass --perturb-kind')
    spec = cfg.perturbation
    if args.level is not None:
        spec = spec.at_level(args.level)

    frame = load_csv(args.input, cfg.split)
    X = frame.values.T
    n_train = split_lengths(frame.length, cfg.split)[0]
    X_noisy = apply_to_series(X, spec, cfg.apply_to, n_train)

    out_dir = op.dirname(op.abspath(args.output))
    make_dir(out_dir)
    save_csv(frame.with_values(X_noisy.T), args.output)
    report = perturbation_report(X, X_noisy, frame.names)
    write_table(report, op.splitext(args.output)[0] + '_report.csv',
                make_perturb_report_json_dict())
    logger.info('%s at level %s: %d point(s) modified', spec.kind,
                spec.level, int(report['modified'].sum()))
    return 0


def _corrupted_frames(frame, cfg, kind):
    """Yield (level, corrupted frame) over the grid of `kind`."""
    X = frame.values.T
    if cfg.perturbation is not None:
        fixed = dataclasses.replace(cfg.perturbation, kind=kind)
    else:
        fixed = PerturbationSpec(kind=kind)
    seed = derive_seed(cfg.seed, PERTURBATION_KINDS.index(kind))
    train_only = (cfg.robustbench_mode == 'retrain' and
                  cfg.apply_to == 'train')
    if train_only:
        n_train = split_lengths(frame.length, cfg.split)[0]
        target = X[:n_train]
    else:
        target = X
    for level, X_noisy in sweep(target, kind, cfg.grids[kind], fixed, seed):
        if train_only:
            X_noisy = np.concatenate([X_noisy, X[n_train:]], axis=0)
        yield level, frame.with_values(X_noisy.T)


def _format_level(level):
    return '{:g}'.format(level)


def run_robustbench(frame, cfg):
    """Run the robustness sweep.

    For every threshold, horizon and corruption kind, each level of the
    grid corrupts the series and a model is scored on its test part:
    retrained on the corrupted series in 'retrain' mode, or the clean
    model in 'corrupt_test' mode. Level 0 reuses the clean scores.

    Returns
    -------
    table : pandas.DataFrame
        Columns tau, horizon, kind, level, metric, value and mode, with
        one 'avg' level per (tau, horizon, kind, metric) averaging the
        non-zero levels.

    """
    mode = cfg.robustbench_mode
    rows = list()
    for tau in cfg.robustbench_taus:
        for horizon in cfg.horizons:
            clean_model, _ = fit_horizon(frame, cfg, horizon, tau)
            clean_scores, _ = score_model(clean_model, cfg, frame)
            logger.info('tau %g, horizon %d, clean: mse %.6g', tau, horizon,
                        clean_scores['mse'])
            for kind in cfg.robustbench_kinds:
                perturbed = OrderedDict((name, list())
                                        for name in ROBUSTBENCH_METRICS)
                for level, noisy in _corrupted_frames(frame, cfg, kind):
                    if level == 0:
                        scores = clean_scores
                    else:
                        model = clean_model
                        if mode == 'retrain':
                            model, _ = fit_horizon(noisy, cfg, horizon, tau)
                        scores, _ = score_model(model, cfg, noisy, frame)
                        for name in ROBUSTBENCH_METRICS:
                            perturbed[name].append(scores[name])
                    logger.info('tau %g, horizon %d, %s at %s: mse %.6g',
                                tau, horizon, kind, _format_level(level),
                                scores['mse'])
                    for name in ROBUSTBENCH_METRICS:
                        rows.append((tau, horizon, kind, _format_level(level),
                                     name, scores[name], mode))
                for name, values in perturbed.items():
                    average = np.mean(values) if values else np.nan
                    rows.append((tau, horizon, kind, 'avg', name, average,
                                 mode))
    return pd.DataFrame(rows, columns=['tau', 'horizon', 'kind', 'level',
                                       'metric', 'value', 'mode'])


def cmd_robustbench(args):
    """Sweep corruption levels and tabulate the errors."""
    extra = {'robustbench.taus': args.tau,
             'robustbench.kinds': args.perturb_kind}
    if args.level_grid is not None:
        kinds = args.perturb_kind
        if kinds is None:
            raise ConfigError('robustbench.kinds', '--level-grid needs '
                              '--perturb-kind')
        for kind in kinds:
            extra['robustbench.' + kind.replace('-', '_')] = args.level_grid
    cfg = _read_config(args, **extra)
    frame = _read_data(cfg)
    out_dir = _output_dir(args, cfg)

    table = run_robustbench(frame, cfg)
    write_table(table, op.join(out_dir, 'robustbench.csv'),
                make_robustbench_json_dict())
    write_run_config(cfg, op.join(out_dir, CONFIG_FNAME))
    values = table.loc[table['level'] != 'avg', 'value']
    if not np.all(np.isfinite(values.astype(float))):
        logger.error('the sweep produced non-finite errors')
        return 1
    return 0


def cmd_verify(args):
    """Run the verification checks; exit 1 listing every failure."""
    seed = 0 if args.seed is None else args.seed
    report = run_checks(args.checks or None, seed=seed)
    out_dir = _output_dir(args)
    write_table(report, op.join(out_dir, 'verify.csv'),
                make_verify_json_dict())
    failed = report.loc[~report['passed'], 'check'].tolist()
    if failed:
        logger.error('%d of %d check(s) failed: %s', len(failed),
                     len(report), ', '.join(failed))
        return 1
    logger.info('all %d checks passed', len(report))
    return 0


def _add_common(parser, config=True):
    if config:
        parser.add_argument('--config', default=None,
                            help='run config file (INI)')
    parser.add_argument('--seed', type=int, default=None,
                        help='seed, overrides the config')
    parser.add_argument('--out', default=None,
                        help='output directory, overrides the config and '
                        '$SEER_OUTPUT_ROOT')


def make_parser():
    """Build the argument parser with one subcommand per task."""
    parser = argparse.ArgumentParser(
        prog='seer', description='Robust patch-based time series '
        'forecasting with token filtering')
    parser.add_argument('--version', action='version',
                        version=seer_forecast.__version__)
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help='-v for info, -vv for debug messages')
    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    sub = commands.add_parser('train', help=cmd_train.__doc__)
    _add_common(sub)
    sub.add_argument('--data', default=None, help='CSV dataset')
    sub.add_argument('--horizons', type=int, nargs='+', default=None)
    sub.add_argument('--tau', type=float, default=None,
                     help='token filter threshold')
    sub.set_defaults(func=cmd_train)

    sub = commands.add_parser('eval', help=cmd_eval.__doc__)
    _add_common(sub)
    sub.add_argument('--checkpoint', required=True)
    sub.add_argument('--data', default=None, help='CSV dataset')
    sub.add_argument('--horizons', type=int, nargs='+', default=None,
                     help='defaults to every horizon of the checkpoint')
    sub.add_argument('--metrics', nargs='+', default=list(METRICS),
                     choices=METRICS)
    sub.set_defaults(func=cmd_eval)

    sub = commands.add_parser('perturb', help=cmd_perturb.__doc__)
    sub.add_argument('input', help='clean CSV file')
    sub.add_argument('output', help='corrupted CSV file to write')
    sub.add_argument('--config', default=None,
                     help='run config file, its [perturbation] section is '
                     'used')
    sub.add_argument('--seed', type=int, default=None)
    sub.add_argument('--perturb-kind', default=None,
                     choices=PERTURBATION_KINDS)
    sub.add_argument('--level', type=float, default=None,
                     help='value of the swept parameter of the kind')
    sub.add_argument('--apply-to', default=None, choices=APPLY_TO)
    sub.set_defaults(func=cmd_perturb)

    sub = commands.add_parser('robustbench', help=cmd_robustbench.__doc__)
    _add_common(sub)
    sub.add_argument('--data', default=None, help='CSV dataset')
    sub.add_argument('--horizons', type=int, nargs='+', default=None)
    sub.add_argument('--tau', type=float, nargs='+', default=None,
                     help='thresholds to compare')
    sub.add_argument('--perturb-kind', nargs='+', default=None,
                     choices=PERTURBATION_KINDS)
    sub.add_argument('--level-grid', type=float, nargs='+', default=None,
                     help='levels for the kinds given by --perturb-kind')
    sub.set_defaults(func=cmd_robustbench)

    sub = commands.add_parser('verify', help=cmd_verify.__doc__)
    _add_common(sub, config=False)
    sub.add_argument('--checks', nargs='+', default=None,
                     choices=list(CHECKS))
    sub.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    """Run the command line and return the exit code."""
    args = make_parser().parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.func(args)
    except (ConfigError, DataError, CheckpointError,
            DivisibilityError) as err:
        logger.error('%s', err)
        return 2
    except NonFiniteError as err:
        logger.error('%s', err)
        return 1


if __name__ == '__main__':
    sys.exit(main())
