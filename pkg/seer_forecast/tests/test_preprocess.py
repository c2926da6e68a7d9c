"""Testing instance normalization and patching."""
import pytest
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from seer_forecast import tensor as tn
from seer_forecast.errors import ConfigError, DivisibilityError, ShapeError
from seer_forecast.preprocess import (PatchConfig, instance_normalize,
                                      denormalize, make_patches, unpatch)


def test_instance_normalize():
    """Test per-channel standardization and its inverse."""
    rng = np.random.default_rng(0)
    X = rng.normal(5., 3., size=(4, 2, 96))
    X_norm, stats = instance_normalize(X)
    assert stats.mean.shape == (4, 2)
    assert stats.n_channels == 2
    np.testing.assert_allclose(X_norm.mean(axis=-1), 0., atol=1e-12)
    np.testing.assert_allclose(X_norm.std(axis=-1), 1., atol=1e-5)
    np.testing.assert_allclose(denormalize(X_norm, stats), X, rtol=1e-12)

    # a Tensor stays a Tensor
    Y = denormalize(tn.Tensor(X_norm[..., :8]), stats)
    assert isinstance(Y, tn.Tensor)


def test_constant_channel():
    """Test that a constant channel normalizes to zeros."""
    X = np.vstack([np.full(10, 7.), np.arange(10.)])
    X_norm, stats = instance_normalize(X)
    assert stats.std[0] == 0.
    np.testing.assert_array_equal(X_norm[0], 0.)
    np.testing.assert_allclose(denormalize(X_norm, stats)[0], 7.)


def test_normalize_errors():
    """Test too short windows and channel mismatches."""
    with pytest.raises(ShapeError, match='at least 2 time points'):
        instance_normalize(np.ones((3, 1)))
    _, stats = instance_normalize(np.random.default_rng(0).normal(
        size=(2, 8)))
    with pytest.raises(ShapeError, match='3 channels, statistics have 2'):
        denormalize(np.zeros((3, 4)), stats)


def test_make_patches():
    """Test patch shapes and front-replicate padding."""
    X = np.arange(2 * 96, dtype=float).reshape(2, 96)
    patches = make_patches(X, PatchConfig(16))
    assert patches.shape == (2, 6, 16)
    np.testing.assert_array_equal(patches[1, 2], X[1, 32:48])

    X = np.arange(1., 11.)
    patches = make_patches(X, PatchConfig(4))
    assert patches.shape == (3, 4)
    np.testing.assert_array_equal(patches[0], [1., 1., 1., 2.])
    np.testing.assert_array_equal(unpatch(patches, 10), X)

    with pytest.raises(DivisibilityError, match='does not divide 10'):
        make_patches(X, PatchConfig(4, 'strict'))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(1, 12), st.integers(0, 2 ** 16))
def test_unpatch_inverts_make_patches(length, patch_len, seed):
    """Test that patching then joining gives back the series."""
    X = np.random.default_rng(seed).normal(size=(3, length))
    patches = make_patches(X, PatchConfig(patch_len))
    assert patches.shape == (3, int(np.ceil(length / patch_len)), patch_len)
    np.testing.assert_array_equal(unpatch(patches, length), X)


@pytest.mark.parametrize('patch_len, padding, field', [
    (0, 'front-replicate', 'model.patch_len'),
    (4, 'zeros', 'model.padding'),
])
def test_patch_config_errors(patch_len, padding, field):
    """Test validation of the patch configuration."""
    with pytest.raises(ConfigError, match=field):
        PatchConfig(patch_len, padding)
