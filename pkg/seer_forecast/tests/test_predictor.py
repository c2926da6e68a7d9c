"""Testing the forecaster, its loss and the training loop."""
import pytest
import numpy as np

from seer_forecast import tensor as tn
from seer_forecast.data import split, window_arrays
from seer_forecast.errors import (ConfigError, DivisibilityError,
                                  NonFiniteError, ShapeError)
from seer_forecast.predictor import (ModelConfig, SeerModel, TRACE_COLUMNS,
                                     l1_loss, forecast, evaluate_loss, train)
from seer_forecast.tests.conftest import make_sine_frame


def test_model_config_defaults():
    """Test the derived widths of the default configuration."""
    cfg = ModelConfig()
    assert cfg.d_reduced == 32
    assert cfg.d_pool == 32
    assert cfg.n_patches == 6
    assert cfg.attention.head_dim == 16
    assert ModelConfig(feature_reduction=False).d_reduced == cfg.d_model
    assert ModelConfig(lookback=100, patch_len=16).n_patches == 7


@pytest.mark.parametrize('changes, field', [
    (dict(lookback=1), 'data.lookback'),
    (dict(horizon=0), 'data.horizons'),
    (dict(reduction_ratio=0.), 'model.reduction_ratio'),
    (dict(d_reduced=65), 'model.d_reduced'),
    (dict(d_reduced=16, feature_reduction=False), 'model.d_reduced'),
    (dict(d_pool=0), 'model.d_pool'),
    (dict(series_embedding='mean'), 'model.series_embedding'),
    (dict(tau=1.), 'model.tau'),
    (dict(top_k=9), 'moe.top_k'),
    (dict(n_heads=3), 'attention.n_heads'),
])
def test_model_config_errors(changes, field):
    """Test that invalid fields are named in the error."""
    with pytest.raises(ConfigError, match=field):
        ModelConfig(**changes)


def test_model_config_dict(toy_cfg):
    """Test the dict round trip and unknown fields."""
    assert ModelConfig.from_dict(toy_cfg.to_dict()) == toy_cfg
    assert toy_cfg.with_horizon(7).horizon == 7
    with pytest.raises(ConfigError, match='unknown field'):
        ModelConfig.from_dict(dict(toy_cfg.to_dict(), depth=3))


def test_forward_shapes(toy_cfg):
    """Test single and batched windows."""
    model = SeerModel(toy_cfg)
    rng = np.random.default_rng(0)
    assert model(rng.normal(size=(3, 16))).shape == (3, 4)
    assert model(rng.normal(size=(5, 3, 16))).shape == (5, 3, 4)
    trace = model.last_trace
    assert trace.tokens.shape == (5, 3, 4, 8)
    assert trace.replaced.shape == (5, 3, 4, 8)
    assert trace.attended.shape == (5, 3, 5, 8)
    assert trace.prototypes.prototypes.shape == (5, 3, 8)

    with pytest.raises(ShapeError, match=r'\(N, 16\)'):
        model(np.ones((3, 12)))
    with pytest.raises(ShapeError):
        model(np.ones(16))
    with pytest.raises(ValueError, match='needs an rng'):
        model(np.ones((3, 16)), training=True)


def test_strict_padding(toy_cfg):
    """Test that strict patching rejects a lookback p does not divide."""
    cfg = ModelConfig.from_dict(dict(toy_cfg.to_dict(), lookback=18,
                                     padding='strict'))
    with pytest.raises(DivisibilityError, match='does not divide 18'):
        SeerModel(cfg)(np.ones((2, 18)))


def test_batched_equals_single(toy_cfg):
    """Test that inference on a batch matches window by window."""
    model = SeerModel(toy_cfg)
    X = np.random.default_rng(0).normal(size=(6, 2, 16)).cumsum(axis=-1)
    batched = forecast(model, X, batch_size=4)
    for b in range(len(X)):
        np.testing.assert_allclose(batched[b], forecast(model, X[b]),
                                   rtol=1e-10, atol=1e-12)
    assert forecast(model, np.zeros((0, 2, 16))).shape == (0, 2, 4)


def test_inference_is_deterministic(toy_cfg):
    """Test repeated inference and seeded construction."""
    X = np.random.default_rng(0).normal(size=(2, 16))
    a, b = SeerModel(toy_cfg), SeerModel(toy_cfg)
    np.testing.assert_array_equal(forecast(a, X), forecast(a, X))
    np.testing.assert_array_equal(forecast(a, X), forecast(b, X))


def test_token_filter_off_keeps_all(toy_cfg):
    """Test the mask when the filter is disabled or tau is 0."""
    X = np.random.default_rng(0).normal(size=(2, 16))
    cfg = ModelConfig.from_dict(dict(toy_cfg.to_dict(), token_filter=False,
                                     tau=0.5))
    model = SeerModel(cfg)
    model(X)
    assert model.last_trace.filter_mask is None
    np.testing.assert_array_equal(model.last_trace.mask.values, 1.)

    model = SeerModel(toy_cfg)
    model(X)
    np.testing.assert_array_equal(model.last_trace.mask.values, 1.)
    np.testing.assert_array_equal(model.last_trace.replaced.values,
                                  model.last_trace.tokens.values)


def test_tau_one_replaces_nearly_all(toy_cfg):
    """Test that a threshold close to 1 swaps tokens for prototypes."""
    model = SeerModel(toy_cfg)
    X = np.random.default_rng(0).normal(size=(2, 16))
    model(X, tau=1. - 1e-7)
    trace = model.last_trace
    assert not trace.filter_mask.indicators.any()
    expected = np.broadcast_to(trace.prototypes.prototypes.values[:, None],
                               trace.tokens.shape)
    np.testing.assert_allclose(trace.replaced.values, expected, rtol=1e-12)


@pytest.mark.parametrize('changes', [
    dict(use_moe=False),
    dict(series_embedding='simple'),
    dict(feature_reduction=False),
    dict(positional_embedding=False),
    dict(noisy_gating=False),
    dict(n_shared=0),
])
def test_ablation_variants(toy_cfg, changes):
    """Test that every variant builds, trains a step and predicts."""
    cfg = ModelConfig.from_dict(dict(toy_cfg.to_dict(), d_reduced=None,
                                     **changes))
    if not cfg.feature_reduction:
        assert cfg.d_reduced == cfg.d_model
    model = SeerModel(cfg)
    X = np.random.default_rng(0).normal(size=(3, 2, 16))
    loss = l1_loss(model(X, training=True, rng=0), np.zeros((3, 2, 4)))
    tn.backward(loss)
    assert model.head.weight.grad is not None
    assert loss.is_finite()
    assert np.all(np.isfinite(forecast(model, X)))


def test_gradients_reach_filter(toy_cfg):
    """Test that the token filter is trained through the identity."""
    cfg = ModelConfig.from_dict(dict(toy_cfg.to_dict(), tau=0.3))
    model = SeerModel(cfg)
    X = np.random.default_rng(0).normal(size=(2, 16))
    tn.backward(tn.sum(model(X)))
    assert np.any(model.token_filter.linear.weight.grad != 0)


def test_l1_loss():
    """Test the mean absolute error loss."""
    loss = l1_loss(tn.Tensor([[1., 2.], [3., 4.]]), np.array([[0., 2.],
                                                             [5., 4.]]))
    assert loss.item() == pytest.approx(0.75)
    with pytest.raises(ShapeError, match='differ in shape'):
        l1_loss(tn.Tensor(np.ones(3)), np.ones(2))


def always_out_of_memory(X, **kwargs):
    """Stand in for a forward pass that never fits in memory."""
    raise MemoryError


@pytest.fixture
def sine_windows():
    """Train and validation windows of a short sine frame."""
    frame = make_sine_frame(length=200, n_channels=2)
    train_part, val_part, _ = split(frame, (0.6, 0.2, 0.2))
    X, Y, _ = window_arrays(train_part, 16, 4, stride=2)
    X_val, Y_val, _ = window_arrays(val_part, 16, 4)
    return (X, Y), (X_val, Y_val)


def test_train_zero_epochs(toy_cfg, sine_windows):
    """Test that zero epochs leave the model as initialized."""
    model = SeerModel(toy_cfg)
    before = model.state_dict()
    result = train(model, *sine_windows, epochs=0)
    assert list(result.trace.columns) == TRACE_COLUMNS
    assert len(result.trace) == 0
    assert result.best_epoch == 0
    for name, values in model.state_dict().items():
        np.testing.assert_array_equal(values, before[name])


def test_train_is_deterministic(toy_cfg, sine_windows):
    """Test that the same seed gives identical traces and weights."""
    results, states = list(), list()
    for _ in range(2):
        model = SeerModel(toy_cfg)
        results.append(train(model, *sine_windows, epochs=2, batch_size=8,
                             seed=3))
        states.append(model.state_dict())
    assert results[0].trace.equals(results[1].trace)
    for name in states[0]:
        np.testing.assert_array_equal(states[0][name], states[1][name])
    assert results[0].trace['epoch'].tolist() == [1, 2]


def test_train_early_stopping(toy_cfg, sine_windows):
    """Test stopping once the validation loss stops improving."""
    model = SeerModel(toy_cfg)
    # lr = 0 keeps the validation loss constant
    result = train(model, *sine_windows, epochs=10, lr=0., patience=2)
    assert result.stopped_early
    assert result.best_epoch == 1
    assert len(result.trace) == 3
    assert result.trace['val_loss'].nunique() == 1


def test_train_halves_batch_on_memory_error(toy_cfg, sine_windows,
                                            caplog):
    """Test the batch size fallback."""
    model = SeerModel(toy_cfg)
    original = model.forward

    def forward(X, **kwargs):
        if len(X) > 4:
            raise MemoryError
        return original(X, **kwargs)

    model.forward = forward
    result = train(model, *sine_windows, epochs=1, batch_size=16,
                   min_batch_size=2)
    assert result.trace['batch_size'].tolist() == [4]
    assert 'halving batch size to 8' in caplog.text

    model = SeerModel(toy_cfg)
    model.forward = always_out_of_memory
    with pytest.raises(MemoryError):
        train(model, *sine_windows, epochs=1, batch_size=8,
              min_batch_size=8)


def test_train_non_finite_loss(toy_cfg, sine_windows):
    """Test that a NaN loss stops training."""
    model = SeerModel(toy_cfg)
    model.head.bias.values[:] = np.nan
    with pytest.raises(NonFiniteError, match='loss is nan at epoch 1'):
        train(model, *sine_windows, epochs=1)


def test_train_shape_errors(toy_cfg, sine_windows):
    """Test mismatched windows."""
    (X, Y), _ = sine_windows
    model = SeerModel(toy_cfg)
    with pytest.raises(ShapeError, match='horizon 3'):
        train(model, (X, Y[..., :3]), epochs=1)
    with pytest.raises(ShapeError, match='no training windows'):
        train(model, (X[:0], Y[:0]), epochs=1)


@pytest.mark.parametrize('c', [0.5, 3., 40.])
def test_forecast_follows_input_scale(toy_cfg, c):
    """Test that scaling a channel scales its forecast about the mean."""
    model = SeerModel(toy_cfg)
    X = np.random.default_rng(0).normal(5., 2., size=(3, 2, 16))
    scaled = X.copy()
    scaled[:, 0] *= c
    before = forecast(model, X)
    after = forecast(model, scaled)
    mean = X.mean(axis=-1, keepdims=True)
    np.testing.assert_allclose(after[:, 0] - c * mean[:, 0],
                               c * (before[:, 0] - mean[:, 0]),
                               rtol=1e-4, atol=1e-4 * c)
    np.testing.assert_allclose(after[:, 1], before[:, 1], rtol=1e-4,
                               atol=1e-4)


@pytest.mark.slow
def test_training_reduces_error():
    """Test a fivefold drop of the validation MAE on a sine task.

    With full batches and no gating noise every epoch is one
    deterministic Adam step.

    """
    frame = make_sine_frame(length=1000, n_channels=1, period=24)
    train_part, val_part, _ = split(frame, (0.6, 0.2, 0.2))
    X, Y, _ = window_arrays(train_part, 96, 24)
    X_val, Y_val, _ = window_arrays(val_part, 96, 24)
    cfg = ModelConfig(lookback=96, horizon=24, patch_len=16, d_model=16,
                      n_experts=4, top_k=2, n_heads=2, tau=0., seed=0,
                      noisy_gating=False)
    model = SeerModel(cfg)
    untrained = evaluate_loss(model, X_val, Y_val)
    result = train(model, (X, Y), (X_val, Y_val), epochs=120,
                   batch_size=len(X), lr=3e-3, seed=0, patience=10)
    trained = evaluate_loss(model, X_val, Y_val)
    assert trained * 5 <= untrained

    losses = result.trace['train_loss'].values
    assert np.mean(np.diff(losses) <= 0) >= 0.8
    assert losses[-1] < losses[0]
