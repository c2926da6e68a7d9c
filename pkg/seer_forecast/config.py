"""Read, validate and write run-config files.

Run configs are INI-style files handled by configobj::

    seed = 1
    output_dir = results

    [data]
    path = ETTh2.csv
    horizons = 96, 192

    [model]
    tau = 0.5

Every key is optional except the top-level ``seed``; missing keys take
the defaults from ``define_settings``. Commands that read a dataset also
need ``data.path``, which is taken relative to the config file.

"""
import os
import os.path as op
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

from configobj import ConfigObj, ConfigObjError

from seer_forecast.define_settings import (LOOKBACK, HORIZONS, SPLIT_RATIOS,
                                           WINDOW_STRIDE, METRIC_SCALE,
                                           MASE_SEASONALITY, MSMAPE_EPS,
                                           PATCH_LEN, PADDING, D_MODEL,
                                           REDUCTION_RATIO, TAU, N_EXPERTS,
                                           TOP_K, N_SHARED, N_HEADS, EPOCHS,
                                           BATCH_SIZE, LR, PATIENCE,
                                           NOISE_SCALE, ANOMALY_SEGMENT_LEN,
                                           OUTLIER_RATIO, ANOMALY_SCALE,
                                           MISSING_SEGMENT_LEN, SHIFT_SCALE,
                                           PERTURB_APPLY_TO,
                                           PERTURBATION_KINDS,
                                           DEFAULT_GRIDS, ROBUSTBENCH_MODE,
                                           OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_DIR)
from seer_forecast.data import check_ratios
from seer_forecast.errors import ConfigError
from seer_forecast.perturb import PerturbationSpec, APPLY_TO
from seer_forecast.predictor import ModelConfig

logger = logging.getLogger(__name__)

SCALES = ('raw', 'normalized')
ROBUSTBENCH_MODES = ('retrain', 'corrupt_test')


def _scalar(value, key):
    if isinstance(value, (list, tuple)):
        raise ConfigError(key, 'expected a single value, got a list')
    return value


def _to_int(value, key):
    value = _scalar(value, key)
    try:
        as_float = float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, 'expected an integer, got "{}"'.format(value))
    if as_float != int(as_float):
        raise ConfigError(key, 'expected an integer, got "{}"'.format(value))
    return int(as_float)


def _to_float(value, key):
    value = _scalar(value, key)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(key, 'expected a number, got "{}"'.format(value))


def _to_bool(value, key):
    value = _scalar(value, key)
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ('true', 'yes', 'on', '1'):
        return True
    if text in ('false', 'no', 'off', '0'):
        return False
    raise ConfigError(key, 'expected true or false, got "{}"'.format(value))


def _to_str(value, key):
    return str(_scalar(value, key))


def _to_optional_int(value, key):
    if value is None or str(value).strip().lower() in ('', 'none'):
        return None
    return _to_int(value, key)


def _as_list(value):
    if isinstance(value, (list, tuple)):
        return list(value)
    text = str(value).strip()
    return [part.strip() for part in text.split(',') if part.strip()]


def _to_int_list(value, key):
    return tuple(_to_int(v, key) for v in _as_list(value))


def _to_float_list(value, key):
    return tuple(_to_float(v, key) for v in _as_list(value))


def _to_str_list(value, key):
    return tuple(str(v) for v in _as_list(value))


def _grid_key(kind):
    return kind.replace('-', '_')


# section -> key -> (converter, default); '' is the top level
SCHEMA = OrderedDict([
    ('', OrderedDict([
        ('seed', (_to_int, None)),
        ('output_dir', (_to_str, None)),
    ])),
    ('data', OrderedDict([
        ('path', (_to_str, None)),
        ('split', (_to_float_list, SPLIT_RATIOS)),
        ('lookback', (_to_int, LOOKBACK)),
        ('horizons', (_to_int_list, HORIZONS)),
        ('stride', (_to_int, WINDOW_STRIDE)),
        ('scale', (_to_str, METRIC_SCALE)),
        ('seasonality', (_to_int, MASE_SEASONALITY)),
        ('msmape_eps', (_to_float, MSMAPE_EPS)),
    ])),
    ('model', OrderedDict([
        ('patch_len', (_to_int, PATCH_LEN)),
        ('padding', (_to_str, PADDING)),
        ('d_model', (_to_int, D_MODEL)),
        ('reduction_ratio', (_to_float, REDUCTION_RATIO)),
        ('d_reduced', (_to_optional_int, None)),
        ('d_pool', (_to_optional_int, None)),
        ('tau', (_to_float, TAU)),
        ('use_moe', (_to_bool, True)),
        ('series_embedding', (_to_str, 'augmented')),
        ('token_filter', (_to_bool, True)),
        ('feature_reduction', (_to_bool, True)),
        ('positional_embedding', (_to_bool, True)),
    ])),
    ('moe', OrderedDict([
        ('n_experts', (_to_int, N_EXPERTS)),
        ('top_k', (_to_int, TOP_K)),
        ('n_shared', (_to_int, N_SHARED)),
        ('noisy_gating', (_to_bool, True)),
    ])),
    ('attention', OrderedDict([
        ('n_heads', (_to_int, N_HEADS)),
    ])),
    ('training', OrderedDict([
        ('epochs', (_to_int, EPOCHS)),
        ('batch_size', (_to_int, BATCH_SIZE)),
        ('lr', (_to_float, LR)),
        ('patience', (_to_int, PATIENCE)),
    ])),
    ('perturbation', OrderedDict([
        ('kind', (_to_str, None)),
        ('r_noise', (_to_float, 0.)),
        ('alpha_noise', (_to_float, NOISE_SCALE)),
        ('r_cont', (_to_float, 0.)),
        ('len_cont', (_to_int, ANOMALY_SEGMENT_LEN)),
        ('r_out', (_to_float, OUTLIER_RATIO)),
        ('alpha_anom', (_to_float, ANOMALY_SCALE)),
        ('r_miss', (_to_float, 0.)),
        ('len_miss', (_to_int, MISSING_SEGMENT_LEN)),
        ('k_shift', (_to_int, 1)),
        ('alpha_shift', (_to_float, SHIFT_SCALE)),
        ('apply_to', (_to_str, PERTURB_APPLY_TO)),
        ('seed', (_to_optional_int, None)),
    ])),
    ('robustbench', OrderedDict(
        [('kinds', (_to_str_list, PERTURBATION_KINDS)),
         ('mode', (_to_str, ROBUSTBENCH_MODE)),
         ('taus', (_to_float_list, (TAU,)))] +
        [(_grid_key(kind), (_to_float_list, DEFAULT_GRIDS[kind]))
         for kind in PERTURBATION_KINDS])),
])


@dataclass
class RunConfig:
    """A validated run configuration.

    Attributes
    ----------
    seed : int
    data_path : str | None
    output_dir : str | None
    split : tuple of float
    lookback : int
    horizons : tuple of int
    stride : int
    scale : str
        'raw' or 'normalized' metrics.
    seasonality : int
    msmape_eps : float
    model : ModelConfig
        Built for the first horizon.
    epochs, batch_size, patience : int
    lr : float
    perturbation : PerturbationSpec | None
    apply_to : str
    robustbench_kinds : tuple of str
    robustbench_mode : str
    robustbench_taus : tuple of float
    grids : dict
        Perturbation kind -> tuple of levels.
    source : str | None
        The file the config was read from.

    """

    seed: int
    data_path: str = None
    output_dir: str = None
    split: tuple = SPLIT_RATIOS
    lookback: int = LOOKBACK
    horizons: tuple = HORIZONS
    stride: int = WINDOW_STRIDE
    scale: str = METRIC_SCALE
    seasonality: int = MASE_SEASONALITY
    msmape_eps: float = MSMAPE_EPS
    model: ModelConfig = None
    epochs: int = EPOCHS
    batch_size: int = BATCH_SIZE
    lr: float = LR
    patience: int = PATIENCE
    perturbation: PerturbationSpec = None
    apply_to: str = PERTURB_APPLY_TO
    robustbench_kinds: tuple = PERTURBATION_KINDS
    robustbench_mode: str = ROBUSTBENCH_MODE
    robustbench_taus: tuple = (TAU,)
    grids: dict = field(default_factory=lambda: dict(DEFAULT_GRIDS))
    source: str = None

    def model_config(self, horizon=None, tau=None):
        """The model config for `horizon` and threshold `tau`."""
        cfg = self.model
        if horizon is not None:
            cfg = cfg.with_horizon(horizon)
        if tau is not None:
            cfg = ModelConfig.from_dict(dict(cfg.to_dict(), tau=float(tau)))
        return cfg


def _read(fname):
    if not op.exists(fname):
        raise ConfigError('config', 'file "{}" does not exist'.format(fname))
    try:
        return ConfigObj(fname, file_error=True, encoding='utf-8')
    except (ConfigObjError, IOError) as err:
        raise ConfigError('config', 'cannot parse "{}": {}'
                          .format(fname, err))


def _flatten(parsed):
    """Turn the parsed file into {'section.key': raw value}."""
    flat = OrderedDict()
    for name, value in parsed.items():
        if isinstance(value, dict):
            if name not in SCHEMA or name == '':
                raise ConfigError(name, 'unknown section')
            for key, raw in value.items():
                if isinstance(raw, dict):
                    raise ConfigError('{}.{}'.format(name, key),
                                      'nested sections are not supported')
                flat['{}.{}'.format(name, key)] = raw
        else:
            flat[name] = value
    return flat


def _convert(flat):
    """Apply converters and defaults, section by section."""
    known = {('{}.{}'.format(section, key) if section else key)
             for section, keys in SCHEMA.items() for key in keys}
    unknown = [k for k in flat if k not in known]
    if unknown:
        raise ConfigError(unknown[0], 'unknown key')
    values = OrderedDict()
    for section, keys in SCHEMA.items():
        for key, (converter, default) in keys.items():
            name = '{}.{}'.format(section, key) if section else key
            if name in flat and flat[name] is not None:
                values[name] = converter(flat[name], name)
            else:
                values[name] = default
    return values


def _check_choice(values, name, choices):
    if values[name] not in choices:
        raise ConfigError(name, 'must be one of {}, got "{}"'
                          .format(choices, values[name]))


def _build(values, source):
    if values['seed'] is None:
        raise ConfigError('seed', 'is required')
    if values['seed'] < 0:
        raise ConfigError('seed', 'must be >= 0, got {}'
                          .format(values['seed']))
    data_path = values['data.path']
    if data_path is not None:
        if source is not None and not op.isabs(data_path):
            data_path = op.join(op.dirname(op.abspath(source)), data_path)
        if not op.exists(data_path):
            raise ConfigError('data.path', 'file "{}" does not exist'
                              .format(data_path))
    try:
        split = check_ratios(values['data.split'])
    except ConfigError as err:
        raise ConfigError('data.split', err.reason)
    horizons = values['data.horizons']
    if not horizons or len(set(horizons)) != len(horizons):
        raise ConfigError('data.horizons', 'need distinct horizons, got {}'
                          .format(horizons))
    if values['data.stride'] < 1:
        raise ConfigError('data.stride', 'must be >= 1, got {}'
                          .format(values['data.stride']))
    if values['data.seasonality'] < 1:
        raise ConfigError('data.seasonality', 'must be >= 1, got {}'
                          .format(values['data.seasonality']))
    _check_choice(values, 'data.scale', SCALES)
    _check_choice(values, 'perturbation.apply_to', APPLY_TO)
    _check_choice(values, 'robustbench.mode', ROBUSTBENCH_MODES)

    model = ModelConfig(
        lookback=values['data.lookback'], horizon=horizons[0],
        patch_len=values['model.patch_len'], padding=values['model.padding'],
        d_model=values['model.d_model'],
        reduction_ratio=values['model.reduction_ratio'],
        d_reduced=values['model.d_reduced'], d_pool=values['model.d_pool'],
        n_experts=values['moe.n_experts'], top_k=values['moe.top_k'],
        n_shared=values['moe.n_shared'],
        noisy_gating=values['moe.noisy_gating'],
        n_heads=values['attention.n_heads'], tau=values['model.tau'],
        seed=values['seed'], use_moe=values['model.use_moe'],
        series_embedding=values['model.series_embedding'],
        token_filter=values['model.token_filter'],
        feature_reduction=values['model.feature_reduction'],
        positional_embedding=values['model.positional_embedding'])
    if min(horizons) < 1:
        raise ConfigError('data.horizons', 'must all be >= 1, got {}'
                          .format(horizons))

    for name in ('training.epochs', 'training.patience'):
        if values[name] < 0:
            raise ConfigError(name, 'must be >= 0, got {}'
                              .format(values[name]))
    if values['training.batch_size'] < 1:
        raise ConfigError('training.batch_size', 'must be >= 1, got {}'
                          .format(values['training.batch_size']))
    if values['training.lr'] < 0:
        raise ConfigError('training.lr', 'must be >= 0, got {}'
                          .format(values['training.lr']))

    perturbation = None
    if values['perturbation.kind'] is not None:
        fields = {key: values['perturbation.' + key]
                  for key in SCHEMA['perturbation']
                  if key not in ('kind', 'apply_to', 'seed')}
        seed = values['perturbation.seed']
        perturbation = PerturbationSpec(
            kind=values['perturbation.kind'],
            seed=values['seed'] if seed is None else seed, **fields)

    kinds = values['robustbench.kinds']
    for kind in kinds:
        if kind not in PERTURBATION_KINDS:
            raise ConfigError('robustbench.kinds', 'unknown kind "{}", use '
                              '{}'.format(kind, PERTURBATION_KINDS))
    grids = dict()
    for kind in PERTURBATION_KINDS:
        name = 'robustbench.' + _grid_key(kind)
        grid = values[name]
        if not grid:
            raise ConfigError(name, 'needs at least one level')
        for level in grid:
            # validates the level
            PerturbationSpec(kind=kind).at_level(level)
        if kind == 'distribution-shift':
            grid = tuple(int(level) for level in grid)
        grids[kind] = grid
    taus = values['robustbench.taus']
    if not taus:
        raise ConfigError('robustbench.taus', 'needs at least one threshold')
    for tau in taus:
        if not 0. <= tau < 1.:
            raise ConfigError('robustbench.taus', 'must be in [0, 1), got {}'
                              .format(tau))

    return RunConfig(
        seed=values['seed'], data_path=data_path,
        output_dir=values['output_dir'], split=split,
        lookback=values['data.lookback'], horizons=horizons,
        stride=values['data.stride'], scale=values['data.scale'],
        seasonality=values['data.seasonality'],
        msmape_eps=values['data.msmape_eps'], model=model,
        epochs=values['training.epochs'],
        batch_size=values['training.batch_size'], lr=values['training.lr'],
        patience=values['training.patience'], perturbation=perturbation,
        apply_to=values['perturbation.apply_to'],
        robustbench_kinds=kinds, robustbench_mode=values['robustbench.mode'],
        robustbench_taus=taus, grids=grids, source=source)


def load_run_config(fname=None, overrides=None):
    """Read and validate a run config.

    Parameters
    ----------
    fname : str | None
        Path of the config file. None starts from the defaults, in which
        case the overrides must provide the seed.
    overrides : dict | None
        ``'section.key'`` (or a top-level key) -> value, applied on top of
        the file. None values are ignored.

    Returns
    -------
    cfg : RunConfig

    Raises
    ------
    ConfigError
        Naming the offending ``section.key`` and what is wrong with it.

    """
    flat = _flatten(_read(fname)) if fname is not None else OrderedDict()
    for key, value in (overrides or dict()).items():
        if value is not None:
            flat[key] = value
    return _build(_convert(flat), fname)


def _format(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return [_format(v) for v in value]
    return str(value)


def run_config_values(cfg):
    """Flatten a :class:`RunConfig` back to {'section.key': value}."""
    model = cfg.model
    values = OrderedDict([
        ('seed', cfg.seed), ('output_dir', cfg.output_dir),
        ('data.path', cfg.data_path), ('data.split', cfg.split),
        ('data.lookback', cfg.lookback), ('data.horizons', cfg.horizons),
        ('data.stride', cfg.stride), ('data.scale', cfg.scale),
        ('data.seasonality', cfg.seasonality),
        ('data.msmape_eps', cfg.msmape_eps),
        ('moe.n_experts', model.n_experts), ('moe.top_k', model.top_k),
        ('moe.n_shared', model.n_shared),
        ('moe.noisy_gating', model.noisy_gating),
        ('attention.n_heads', model.n_heads),
        ('training.epochs', cfg.epochs),
        ('training.batch_size', cfg.batch_size),
        ('training.lr', cfg.lr), ('training.patience', cfg.patience),
        ('perturbation.apply_to', cfg.apply_to),
        ('robustbench.kinds', cfg.robustbench_kinds),
        ('robustbench.mode', cfg.robustbench_mode),
        ('robustbench.taus', cfg.robustbench_taus),
    ])
    for key in SCHEMA['model']:
        values['model.' + key] = getattr(model, key)
    if cfg.perturbation is not None:
        for key, value in cfg.perturbation.to_dict().items():
            values['perturbation.' + key] = value
    for kind, grid in cfg.grids.items():
        values['robustbench.' + _grid_key(kind)] = grid
    return values


def write_run_config(cfg, fname):
    """Write the resolved `cfg` to `fname`, sections in schema order."""
    values = run_config_values(cfg)
    out = ConfigObj(encoding='utf-8')
    out.filename = fname
    for section, keys in SCHEMA.items():
        if section:
            out[section] = dict()
        target = out[section] if section else out
        for key in keys:
            name = '{}.{}'.format(section, key) if section else key
            value = values.get(name)
            if value is None:
                continue
            target[key] = _format(value)
    out.write()
    return fname


def resolve_output_dir(flag=None, cfg=None):
    """Pick the output directory.

    The ``--out`` flag wins over the config's ``output_dir``, which wins
    over ``$SEER_OUTPUT_ROOT``; the fallback is ``./seer_output``.

    """
    if flag:
        return flag
    if cfg is not None and cfg.output_dir:
        if cfg.source is not None and not op.isabs(cfg.output_dir):
            return op.join(op.dirname(op.abspath(cfg.source)),
                           cfg.output_dir)
        return cfg.output_dir
    return os.environ.get(OUTPUT_ROOT_ENV) or DEFAULT_OUTPUT_DIR
