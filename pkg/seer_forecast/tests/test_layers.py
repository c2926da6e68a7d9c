"""Testing the parameter containers and layers."""
import pytest
import numpy as np

from seer_forecast import tensor as tn
from seer_forecast.errors import CheckpointError, ShapeError
from seer_forecast.layers import Linear, ExpertBank, MLP, LayerNorm


def test_named_parameters():
    """Test parameter names follow the attribute path."""
    rng = np.random.default_rng(0)
    mlp = MLP(3, 5, 2, rng)
    names = [name for name, _ in mlp.named_parameters()]
    assert names == ['fc1.weight', 'fc1.bias', 'fc2.weight', 'fc2.bias']
    assert mlp.n_parameters() == 3 * 5 + 5 + 5 * 2 + 2

    table = mlp.describe()
    assert list(table.columns) == ['name', 'shape', 'count']
    assert table['shape'].tolist()[0] == '3x5'
    assert table['count'].sum() == mlp.n_parameters()


def test_state_dict_round_trip():
    """Test copying parameters between modules."""
    a = MLP(3, 4, 2, np.random.default_rng(0))
    b = MLP(3, 4, 2, np.random.default_rng(1))
    x = np.random.default_rng(2).normal(size=(5, 3))
    assert not np.allclose(a(x).values, b(x).values)
    b.load_state_dict(a.state_dict())
    np.testing.assert_array_equal(a(x).values, b(x).values)

    # the state is a copy
    state = a.state_dict()
    state['fc1.bias'][:] = 0.
    assert not np.all(a.fc1.bias.values == 0.)


def test_load_state_dict_errors():
    """Test missing, unexpected and misshaped parameters."""
    layer = Linear(2, 3, np.random.default_rng(0))
    with pytest.raises(CheckpointError, match=r"missing \['bias'\]"):
        layer.load_state_dict({'weight': np.zeros((2, 3))})
    with pytest.raises(CheckpointError, match=r"unexpected \['scale'\]"):
        layer.load_state_dict({'weight': np.zeros((2, 3)),
                               'bias': np.zeros(3), 'scale': np.ones(1)})
    with pytest.raises(ShapeError, match='parameter weight has shape'):
        layer.load_state_dict({'weight': np.zeros((3, 2)),
                               'bias': np.zeros(3)})


def test_linear_gradients():
    """Test that a linear layer hands gradients to weight and bias."""
    layer = Linear(2, 1, np.random.default_rng(0))
    x = np.array([[1., 2.], [3., 4.]])
    tn.backward(tn.sum(layer(x)))
    np.testing.assert_array_equal(layer.weight.grad, [[4.], [6.]])
    np.testing.assert_array_equal(layer.bias.grad, [2.])
    layer.zero_grad()
    assert layer.weight.grad is None


def test_expert_bank():
    """Test single-expert projection against the stacked forward."""
    rng = np.random.default_rng(0)
    bank = ExpertBank(3, 4, 2, rng)
    x = rng.normal(size=(5, 4))
    stacked = bank(x).values
    assert stacked.shape == (3, 5, 2)
    for index in range(3):
        np.testing.assert_allclose(bank.project(x, index).values,
                                   stacked[index], rtol=1e-12)
    with pytest.raises(IndexError, match='expert 3 does not exist'):
        bank.project(x, 3)


def test_layer_norm():
    """Test zero mean and unit variance over the last axis."""
    x = np.random.default_rng(0).normal(3., 2., size=(4, 16))
    y = LayerNorm(16)(x).values
    np.testing.assert_allclose(y.mean(axis=-1), 0., atol=1e-12)
    np.testing.assert_allclose(y.std(axis=-1), 1., atol=1e-4)
