"""Testing run-config files."""
import os.path as op

import pytest

from seer_forecast.config import (load_run_config, write_run_config,
                                  resolve_output_dir)
from seer_forecast.define_settings import (HORIZONS, LOOKBACK,
                                           PERTURBATION_KINDS, DEFAULT_GRIDS)
from seer_forecast.errors import ConfigError


def write_ini(tmp_path, text, name='run.ini'):
    """Write `text` to a config file and return its path."""
    fname = tmp_path / name
    fname.write_text(text)
    return str(fname)


def test_defaults():
    """Test the values of an empty config."""
    cfg = load_run_config(None, {'seed': 3})
    assert cfg.seed == 3
    assert cfg.horizons == HORIZONS
    assert cfg.model.lookback == LOOKBACK
    assert cfg.model.horizon == HORIZONS[0]
    assert cfg.model.seed == 3
    assert cfg.robustbench_kinds == PERTURBATION_KINDS
    assert cfg.grids == DEFAULT_GRIDS
    assert cfg.perturbation is None
    assert cfg.data_path is None

    with pytest.raises(ConfigError, match='seed: is required'):
        load_run_config(None)
    with pytest.raises(ConfigError, match='seed: must be >= 0'):
        load_run_config(None, {'seed': -1})


def test_small_run(run_ini, sine_csv):
    """Test reading the sections of a file."""
    cfg = load_run_config(run_ini(horizons='4, 8'))
    assert cfg.seed == 1
    assert cfg.horizons == (4, 8)
    assert cfg.data_path == op.join(op.dirname(sine_csv), 'sine.csv')
    assert cfg.model.patch_len == 4 and cfg.model.n_heads == 2
    assert cfg.model.d_reduced == 4
    assert cfg.epochs == 2 and cfg.lr == 0.005


@pytest.mark.parametrize('text, match', [
    ('seed = 1\n[data]\nfoo = 1\n', 'data.foo: unknown key'),
    ('seed = 1\n[bogus]\nx = 1\n', 'bogus: unknown section'),
    ('seed = 1\n[training]\nepochs = two\n',
     'training.epochs: expected an integer'),
    ('seed = 1\n[training]\nepochs = 2.5\n',
     'training.epochs: expected an integer'),
    ('seed = 1\n[model]\ntoken_filter = maybe\n',
     'model.token_filter: expected true or false'),
    ('seed = 1\n[data]\npath = nowhere.csv\n', 'data.path: file'),
    ('seed = 1\n[data]\nsplit = 0.5, 0.2, 0.2\n', 'data.split'),
    ('seed = 1\n[data]\nhorizons = 4, 4\n', 'data.horizons'),
    ('seed = 1\n[data]\nscale = log\n', 'data.scale'),
    ('seed = 1\n[model]\ntau = 1\n', 'model.tau'),
    ('seed = 1\n[moe]\ntop_k = 9\n', 'moe.top_k'),
    ('seed = 1\n[attention]\nn_heads = 3\n', 'attention.n_heads'),
    ('seed = 1\n[robustbench]\nmode = both\n', 'robustbench.mode'),
    ('seed = 1\n[robustbench]\nkinds = spikes\n', 'robustbench.kinds'),
    ('seed = 1\n[robustbench]\ntaus = 0.5, 1\n', 'robustbench.taus'),
    ('seed = 1\n[robustbench]\ndistribution_shift = 0, 1.5\n',
     'perturbation.k_shift'),
    ('seed = 1\n[perturbation]\nkind = white-noise\nr_noise = 2\n',
     'perturbation.r_noise'),
])
def test_invalid(tmp_path, text, match):
    """Test that errors name the offending key."""
    with pytest.raises(ConfigError, match=match):
        load_run_config(write_ini(tmp_path, text))


def test_missing_file(tmp_path):
    """Test a config path that does not exist."""
    with pytest.raises(ConfigError, match='does not exist'):
        load_run_config(str(tmp_path / 'none.ini'))


def test_overrides(run_ini):
    """Test that flags win over the file and None is ignored."""
    fname = run_ini()
    cfg = load_run_config(fname, {'seed': 5, 'model.tau': 0.25,
                                  'data.horizons': None})
    assert cfg.seed == 5
    assert cfg.model.tau == 0.25
    assert cfg.horizons == (4,)


def test_perturbation_section(tmp_path):
    """Test the recipe and its seed falling back to the run seed."""
    text = ('seed = 4\n[perturbation]\nkind = missing\nr_miss = 0.1\n'
            'apply_to = train\n')
    cfg = load_run_config(write_ini(tmp_path, text))
    assert cfg.perturbation.kind == 'missing'
    assert cfg.perturbation.r_miss == 0.1
    assert cfg.perturbation.seed == 4
    assert cfg.apply_to == 'train'


def test_write_round_trip(tmp_path, run_ini):
    """Test that a written snapshot reads back to the same config."""
    cfg = load_run_config(run_ini(horizons='4, 8'),
                          {'robustbench.taus': '0, 0.5'})
    out = tmp_path / 'snapshot'
    out.mkdir()
    snapshot = write_run_config(cfg, str(out / 'config.ini'))
    loaded = load_run_config(snapshot)
    assert loaded.model == cfg.model
    assert loaded.horizons == cfg.horizons
    assert loaded.split == cfg.split
    assert loaded.robustbench_taus == (0., 0.5)
    assert loaded.grids == cfg.grids
    assert loaded.data_path == cfg.data_path


def test_model_config():
    """Test deriving the config of one horizon and threshold."""
    cfg = load_run_config(None, {'seed': 0})
    model = cfg.model_config(8, tau=0.)
    assert model.horizon == 8 and model.tau == 0.
    assert model.d_model == cfg.model.d_model
    assert cfg.model_config() == cfg.model


def test_resolve_output_dir(tmp_path, monkeypatch):
    """Test the precedence of flag, config and environment."""
    monkeypatch.delenv('SEER_OUTPUT_ROOT', raising=False)
    cfg = load_run_config(write_ini(tmp_path, 'seed = 1\noutput_dir = res\n'))
    assert resolve_output_dir('flag', cfg) == 'flag'
    assert resolve_output_dir(None, cfg) == op.join(str(tmp_path), 'res')
    assert resolve_output_dir() == 'seer_output'
    monkeypatch.setenv('SEER_OUTPUT_ROOT', 'from_env')
    assert resolve_output_dir() == 'from_env'
    assert resolve_output_dir(None, cfg) == op.join(str(tmp_path), 'res')
