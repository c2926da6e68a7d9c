"""Testing the tensor operations and reverse-mode differentiation."""
import pytest
import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from seer_forecast import tensor as tn
from seer_forecast.errors import (ShapeError, DegenerateDistributionError,
                                  NonFiniteError)
from seer_forecast.verify import OP_CASES, GRAD_RTOL, gradient_check

finite_floats = st.floats(-50., 50., allow_nan=False, allow_infinity=False)


@pytest.mark.parametrize('op', list(OP_CASES))
def test_gradient_rules(op):
    """Test every gradient rule against central differences."""
    func, build = OP_CASES[op]
    rng = np.random.default_rng(0)
    errors = gradient_check(func, build(rng), rng)
    assert max(errors) < GRAD_RTOL


def test_every_rule_has_a_case():
    """Test that no registered rule goes unchecked."""
    assert set(tn.GRADIENT_RULES) == set(OP_CASES)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 5), elements=finite_floats), finite_floats)
def test_softmax_properties(x, shift):
    """Test that softmax rows sum to 1 and ignore a constant shift."""
    y = tn.softmax(x, axis=-1).values
    np.testing.assert_allclose(y.sum(axis=-1), 1., rtol=0, atol=1e-12)
    assert np.all(y >= 0)
    shifted = tn.softmax(x + shift, axis=-1).values
    np.testing.assert_allclose(shifted, y, rtol=1e-9, atol=1e-12)


def test_softmax_masked():
    """Test that -inf entries get exactly zero probability."""
    x = np.array([[0., -np.inf, 1.], [-np.inf, -np.inf, 2.]])
    y = tn.softmax(x).values
    assert y[0, 1] == 0.
    np.testing.assert_array_equal(y[1], [0., 0., 1.])

    with pytest.raises(DegenerateDistributionError, match='all -inf'):
        tn.softmax(np.full((2, 3), -np.inf))


def test_broadcasting():
    """Test trailing broadcasting and its gradient."""
    a = tn.Tensor(np.ones((2, 3)), requires_grad=True)
    b = tn.Tensor(np.arange(3.), requires_grad=True)
    tn.backward(tn.sum(a * b))
    np.testing.assert_array_equal(a.grad, np.tile(np.arange(3.), (2, 1)))
    np.testing.assert_array_equal(b.grad, [2., 2., 2.])

    with pytest.raises(ShapeError, match='cannot broadcast'):
        tn.add(np.ones((3, 4)), np.ones(3))


def test_unbroadcast():
    """Test summing a gradient back to a broadcast shape."""
    grad = np.ones((4, 2, 3))
    np.testing.assert_array_equal(tn.unbroadcast(grad, (3,)), [8., 8., 8.])
    np.testing.assert_array_equal(tn.unbroadcast(grad, (2, 1)),
                                  [[12.], [12.]])


def test_backward():
    """Test accumulation, shared inputs and the scalar requirement."""
    x = tn.Tensor([1., 2., 3.], requires_grad=True)
    loss = tn.sum(x * x + x)
    tn.backward(loss)
    np.testing.assert_array_equal(x.grad, 2 * x.values + 1)

    # gradients accumulate until zeroed
    tn.backward(tn.sum(x * x + x))
    np.testing.assert_array_equal(x.grad, 2 * (2 * x.values + 1))
    x.zero_grad()
    assert x.grad is None

    with pytest.raises(ShapeError, match='scalar'):
        tn.backward(x * 2.)

    # constants stay untouched
    c = tn.Tensor([1., 2.])
    tn.backward(tn.sum(c))
    assert c.grad is None


def test_no_grad_and_detach():
    """Test that nothing is recorded under no_grad or through detach."""
    x = tn.Tensor(np.ones(3), requires_grad=True)
    with tn.no_grad():
        y = x * 2.
    assert not y.requires_grad
    z = x * 2.
    assert z.requires_grad

    d = tn.detach(x)
    assert not d.requires_grad
    tn.backward(tn.sum(x * d))
    np.testing.assert_array_equal(x.grad, np.ones(3))


def test_shape_errors():
    """Test errors raised on incompatible shapes."""
    with pytest.raises(ShapeError, match='inner dimensions'):
        tn.matmul(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError, match='at least 2-D'):
        tn.matmul(np.ones(3), np.ones((3, 2)))
    with pytest.raises(ShapeError, match='cannot reshape'):
        tn.reshape(np.ones(6), (4, 2))
    with pytest.raises(ShapeError, match='cannot concat'):
        tn.concat([np.ones((2, 3)), np.ones((3, 3))], axis=1)
    with pytest.raises(ShapeError, match='axis 2 is invalid'):
        tn.sum(np.ones((2, 3)), axis=2)
    with pytest.raises(ShapeError, match='item'):
        tn.Tensor(np.ones(2)).item()


def test_check_finite():
    """Test the finiteness check."""
    values = np.array([1., np.nan, np.inf])
    with pytest.raises(NonFiniteError, match='holds 2 non-finite'):
        tn.check_finite(values, 'values')
    x = tn.Tensor([1., 2.])
    assert tn.check_finite(x) is x


def test_dispatch():
    """Test the named elementwise and reduce entry points."""
    a = np.array([[1., -2.], [3., 4.]])
    np.testing.assert_array_equal(tn.elementwise('abs', a).values, np.abs(a))
    np.testing.assert_array_equal(tn.elementwise('sub', a, 1.).values, a - 1)
    np.testing.assert_array_equal(tn.reduce('max', a, axis=0).values,
                                  [3., 4.])
    np.testing.assert_array_equal(tn.reduce('flatten', a).values, a.ravel())
    np.testing.assert_array_equal(tn.reduce('slice', a, axis=1).values,
                                  [3., 4.])

    with pytest.raises(ValueError, match='needs two operands'):
        tn.elementwise('mul', a)
    with pytest.raises(ValueError, match='unknown elementwise op'):
        tn.elementwise('tanh', a)
    with pytest.raises(ValueError, match='unknown reduce op'):
        tn.reduce('median', a)


def test_clip_and_max_gradients():
    """Test that clipped entries and non-maximal entries get no gradient."""
    x = tn.Tensor([-2., 0.5, 3.], requires_grad=True)
    tn.backward(tn.sum(tn.clip(x, -1., 1.)))
    np.testing.assert_array_equal(x.grad, [0., 1., 0.])

    y = tn.Tensor([[1., 5.], [5., 5.]], requires_grad=True)
    tn.backward(tn.sum(tn.maximum(y, axis=1)))
    # ties go to the first maximal entry
    np.testing.assert_array_equal(y.grad, [[0., 1.], [1., 0.]])


def test_getitem_repeated_index():
    """Test that repeated indices accumulate their gradients."""
    x = tn.Tensor(np.arange(3.), requires_grad=True)
    tn.backward(tn.sum(x[np.array([0, 0, 2])]))
    np.testing.assert_array_equal(x.grad, [2., 0., 1.])
