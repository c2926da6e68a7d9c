"""Testing the checkpoint container."""
import zipfile

import pytest
import numpy as np

from seer_forecast.checkpoint import (save_checkpoint, load_checkpoint,
                                      select_horizons)
from seer_forecast.define_settings import CHECKPOINT_FORMAT
from seer_forecast.errors import CheckpointError
from seer_forecast.predictor import ModelConfig, SeerModel, forecast


@pytest.fixture
def models(toy_cfg):
    """Toy models for horizons 4 and 8."""
    return {h: SeerModel(toy_cfg.with_horizon(h)) for h in (4, 8)}


def test_round_trip(tmp_path, models):
    """Test that loaded models predict exactly like the saved ones."""
    fname = str(tmp_path / 'ckpt.npz')
    save_checkpoint(fname, models)
    loaded = load_checkpoint(fname)
    assert sorted(loaded) == [4, 8]
    X = np.random.default_rng(0).normal(size=(2, 16))
    for horizon, model in models.items():
        assert loaded[horizon].cfg == model.cfg
        np.testing.assert_array_equal(forecast(loaded[horizon], X),
                                      forecast(model, X))


def test_layout(tmp_path, models):
    """Test the archive members, readable with numpy.load."""
    fname = str(tmp_path / 'ckpt.npz')
    save_checkpoint(fname, models)
    with np.load(fname) as archive:
        assert str(archive['__format__']) == CHECKPOINT_FORMAT
        assert int(archive['__version__']) == 1
        np.testing.assert_array_equal(archive['__horizons__'], [4, 8])
        assert 'h8/head.weight' in archive.files
        assert 'horizon' not in str(archive['__config__'])


def test_byte_identical(tmp_path, models):
    """Test that saving twice gives the same bytes."""
    first, second = str(tmp_path / 'a.npz'), str(tmp_path / 'b.npz')
    save_checkpoint(first, models)
    save_checkpoint(second, models)
    with open(first, 'rb') as fa, open(second, 'rb') as fb:
        assert fa.read() == fb.read()


def test_save_errors(tmp_path, toy_cfg):
    """Test inconsistent model collections."""
    fname = str(tmp_path / 'ckpt.npz')
    with pytest.raises(CheckpointError, match='no models'):
        save_checkpoint(fname, {})
    with pytest.raises(CheckpointError, match='predicts 4 steps'):
        save_checkpoint(fname, {8: SeerModel(toy_cfg)})
    other = ModelConfig.from_dict(dict(toy_cfg.to_dict(), horizon=8,
                                       tau=0.5))
    with pytest.raises(CheckpointError, match='share their configuration'):
        save_checkpoint(fname, {4: SeerModel(toy_cfg), 8: SeerModel(other)})


def test_load_errors(tmp_path, models):
    """Test missing, foreign and outdated files."""
    with pytest.raises(CheckpointError, match='does not exist'):
        load_checkpoint(str(tmp_path / 'missing.npz'))

    text = tmp_path / 'text.npz'
    text.write_text('not a checkpoint\n')
    with pytest.raises(CheckpointError, match='cannot read'):
        load_checkpoint(str(text))

    other = str(tmp_path / 'other.npz')
    np.savez(other, weights=np.ones(3))
    with pytest.raises(CheckpointError, match='no __format__ entry'):
        load_checkpoint(other)

    old = str(tmp_path / 'old.npz')
    np.savez(old, __format__=np.array(CHECKPOINT_FORMAT),
             __version__=np.array(99), __config__=np.array('{}'),
             __horizons__=np.array([4]))
    with pytest.raises(CheckpointError, match='version 99 is not supported'):
        load_checkpoint(old)

    # drop one parameter of horizon 8
    fname = str(tmp_path / 'ckpt.npz')
    save_checkpoint(fname, models)
    broken = str(tmp_path / 'broken.npz')
    with zipfile.ZipFile(fname) as source, \
            zipfile.ZipFile(broken, 'w') as target:
        for info in source.infolist():
            if info.filename != 'h8/head.bias.npy':
                target.writestr(info, source.read(info))
    with pytest.raises(CheckpointError, match=r"missing \['head.bias'\]"):
        load_checkpoint(broken)


def test_select_horizons(models):
    """Test picking horizons and the error listing the available ones."""
    assert list(select_horizons(models, [8])) == [8]
    with pytest.raises(CheckpointError, match=r'available: \[4, 8\]'):
        select_horizons(models, [4, 96])
