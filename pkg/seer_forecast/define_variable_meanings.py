"""Provide dicts describing the columns of all tables the CLI writes.

Each dict is dumped as a JSON sidecar next to its CSV file.

main file: seer.py

"""
from collections import OrderedDict

from seer_forecast.define_settings import (MASE_SEASONALITY, MSMAPE_EPS,
                                           METRICS, PERTURBATION_KINDS,
                                           ROBUSTBENCH_METRICS)


def _metric_levels(names=METRICS):
    """Describe the error measures in `names`."""
    levels = OrderedDict([
        ('mse', 'mean squared error over all channels and time steps'),
        ('mae', 'mean absolute error over all channels and time steps'),
        ('mase', ('mean absolute error divided by the mean absolute error of '
                  'the seasonal naive forecast (default lag {}) on the '
                  'training split. "n/a" if that error is '
                  '0').format(MASE_SEASONALITY)),
        ('msmape', ('symmetric mean absolute percentage error with the '
                    'denominator floored at 0.5 + eps (default eps {}), in '
                    'percent').format(MSMAPE_EPS)),
    ])
    return OrderedDict((name, levels[name]) for name in names)


def make_metrics_json_dict():
    """Provide a dict to describe the evaluation table."""
    metrics_json_dict = OrderedDict()

    metrics_json_dict['horizon'] = {
        'Description': 'number of forecast time steps F',
        'Units': 'time steps'
    }

    metrics_json_dict['metric'] = {
        'Description': 'name of the error measure',
        'Levels': _metric_levels()
    }

    metrics_json_dict['value'] = {
        'Description': ('value of the error measure over the test split, on '
                        'the scale given by the "scale" column'),
    }

    metrics_json_dict['scale'] = {
        'Description': 'scale the errors were computed on',
        'Levels': {
            'raw': 'the original units of the data',
            'normalized': ('each window standardized with the statistics of '
                           'its own lookback window')
        }
    }

    metrics_json_dict['n_windows'] = {
        'Description': 'number of test windows scored, none dropped'
    }

    return metrics_json_dict


def make_loss_trace_json_dict():
    """Provide a dict to describe the per-epoch loss trace."""
    trace_json_dict = OrderedDict()

    trace_json_dict['horizon'] = {
        'Description': 'forecast horizon of the model being trained'
    }

    trace_json_dict['epoch'] = {
        'Description': 'one indexed training epoch'
    }

    trace_json_dict['train_loss'] = {
        'Description': ('mean L1 loss over the training batches of this '
                        'epoch, weighted by batch size'),
    }

    trace_json_dict['val_loss'] = {
        'Description': ('mean absolute error on the validation windows after '
                        'this epoch, without training noise'),
    }

    trace_json_dict['batch_size'] = {
        'Description': ('batch size at the end of the epoch. Smaller than '
                        'configured if it was halved on memory pressure')
    }

    return trace_json_dict


def make_robustbench_json_dict():
    """Provide a dict to describe the robustness sweep table."""
    bench_json_dict = OrderedDict()

    bench_json_dict['tau'] = {
        'Description': ('token filter threshold of the model. 0 keeps every '
                        'token')
    }

    bench_json_dict['horizon'] = {
        'Description': 'number of forecast time steps F',
        'Units': 'time steps'
    }

    bench_json_dict['kind'] = {
        'Description': 'kind of corruption',
        'Levels': OrderedDict((kind, kind.replace('-', ' '))
                              for kind in PERTURBATION_KINDS)
    }

    bench_json_dict['level'] = {
        'Description': ('corruption level: ratio of affected points for '
                        'white-noise, anomalies and missing, number of '
                        'shifted segments for distribution-shift. 0 is the '
                        'clean series. "avg" rows average the non-zero '
                        'levels'),
    }

    bench_json_dict['metric'] = {
        'Description': 'name of the error measure',
        'Levels': _metric_levels(ROBUSTBENCH_METRICS)
    }

    bench_json_dict['value'] = {
        'Description': ('value of the error measure over the test split. '
                        'Inputs come from the corrupted series, targets '
                        'from the clean one')
    }

    bench_json_dict['mode'] = {
        'Description': 'how the sweep was run',
        'Levels': {
            'retrain': ('the series was corrupted, then a model was trained '
                        'and tested on it'),
            'corrupt_test': ('a model trained on the clean series was tested '
                             'on the corrupted test split')
        }
    }

    return bench_json_dict


def make_perturb_report_json_dict():
    """Provide a dict to describe the perturbation report."""
    report_json_dict = OrderedDict()

    report_json_dict['channel'] = {
        'Description': 'name of the channel, as in the CSV header'
    }

    report_json_dict['modified'] = {
        'Description': 'number of time points whose value changed'
    }

    report_json_dict['zeroed'] = {
        'Description': ('number of time points that are 0 after the '
                        'corruption and were not 0 before')
    }

    return report_json_dict


def make_verify_json_dict():
    """Provide a dict to describe the verification report."""
    verify_json_dict = OrderedDict()

    verify_json_dict['group'] = {
        'Description': 'group of related checks, as accepted by --checks'
    }

    verify_json_dict['check'] = {
        'Description': 'name of the check, e.g. "gradient rule matmul"'
    }

    verify_json_dict['passed'] = {
        'Description': 'whether the check passed',
        'Levels': {
            'True': 'passed',
            'False': 'failed'
        }
    }

    verify_json_dict['detail'] = {
        'Description': 'measured error or counterexample, if any'
    }

    return verify_json_dict
