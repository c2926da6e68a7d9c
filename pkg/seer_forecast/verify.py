"""Self-checks run by ``seer verify``.

Every check returns a :class:`CheckResult`. The checks cover

- each registered gradient rule against central finite differences,
- the gradient of a whole toy model against finite differences,
- the straight-through identity,
- expert gating, token replacement and causal attention,
- the corruption algorithms against their counting formulas.

Gradient rules are looked up by name when :func:`tensor.backward` runs, so
replacing an entry of ``GRADIENT_RULES`` makes the matching check fail.

"""
import logging
from collections import OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np
import pandas as pd

from seer_forecast import tensor as tn
from seer_forecast import replacement
from seer_forecast.embedding import MoEConfig, AugmentedPatchEmbedding
from seer_forecast.predictor import ModelConfig, SeerModel
from seer_forecast.replacement import (AttentionConfig, MultiHeadAttention,
                                       ReplacedAttention, replace_tokens,
                                       straight_through_identity)
from seer_forecast.perturb import (inject_white_noise, inject_anomalies,
                                   inject_missing, inject_distribution_shift,
                                   sweep)
from seer_forecast.define_settings import (NOISE_RATIOS, ANOMALY_RATIOS,
                                           MISSING_RATIOS, SHIFT_SEGMENTS,
                                           ANOMALY_SEGMENT_LEN, OUTLIER_RATIO,
                                           ANOMALY_SCALE, SHIFT_SCALE)

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
GRAD_RTOL = 1e-4
# gradients with a smaller norm are compared on an absolute scale
GRAD_FLOOR = 1e-5


@dataclass
class CheckResult:
    """Outcome of one check."""

    name: str
    passed: bool
    detail: str = ''


def _signed(rng, shape, low=0.2, high=1.0):
    """Values with magnitude in [low, high], away from kinks at 0."""
    return rng.uniform(low, high, size=shape) * rng.choice([-1., 1.],
                                                           size=shape)


def _distinct(rng, shape):
    """Values whose pairwise gaps are at least 0.1."""
    size = int(np.prod(shape))
    return (rng.permutation(size) * 0.1 - size * 0.05).reshape(shape)


def gradient_check(func, arrays, rng, step=FD_STEP):
    """Compare backward gradients of `func` with central differences.

    The loss is a random linear functional of the output, so it stays
    smooth wherever `func` is.

    Parameters
    ----------
    func : callable
        Maps Tensors built from `arrays` to a Tensor.
    arrays : list of ndarray
    rng : numpy.random.Generator
        Draws the weights of the linear functional.
    step : float

    Returns
    -------
    errors : list of float
        Relative error per input, ``|a - n| / max(|a|, |n|, GRAD_FLOOR)``
        with Euclidean norms.

    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [tn.Tensor(a, requires_grad=True) for a in arrays]
    out = func(*tensors)
    weights = rng.standard_normal(out.shape)

    def loss_of(values):
        with tn.no_grad():
            return float(np.sum(func(*[tn.Tensor(v) for v in values]).values
                                * weights))

    tn.backward(tn.sum(out * weights))
    errors = list()
    for k, tensor in enumerate(tensors):
        analytic = (np.zeros(tensor.shape) if tensor.grad is None
                    else tensor.grad)
        numeric = np.zeros(tensor.shape)
        for idx in np.ndindex(*tensor.shape):
            values = [a.copy() for a in arrays]
            values[k][idx] += step
            up = loss_of(values)
            values[k][idx] -= 2 * step
            down = loss_of(values)
            numeric[idx] = (up - down) / (2 * step)
        errors.append(_relative_error(analytic, numeric))
    return errors


def _relative_error(analytic, numeric):
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), GRAD_FLOOR)
    return float(np.linalg.norm(analytic - numeric) / scale)


# op name -> (function of tensors, input builder)
OP_CASES = OrderedDict([
    ('add', (lambda a, b: a + b,
             lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4,))])),
    ('sub', (lambda a, b: a - b,
             lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(3, 1))])),
    ('mul', (lambda a, b: a * b,
             lambda rng: [rng.normal(size=(2, 3)), rng.normal(size=(2, 3))])),
    ('div', (lambda a, b: a / b,
             lambda rng: [rng.normal(size=(2, 3)), _signed(rng, (3,), 0.5)])),
    ('neg', (lambda a: -a, lambda rng: [rng.normal(size=(5,))])),
    ('exp', (tn.exp, lambda rng: [rng.normal(size=(2, 3))])),
    ('sigmoid', (tn.sigmoid, lambda rng: [rng.normal(size=(2, 3))])),
    ('relu', (tn.relu, lambda rng: [_signed(rng, (2, 5))])),
    ('gelu', (tn.gelu, lambda rng: [rng.normal(size=(2, 5))])),
    ('sqrt', (tn.sqrt, lambda rng: [rng.uniform(0.5, 2., size=(4,))])),
    ('abs', (tn.absolute, lambda rng: [_signed(rng, (2, 5))])),
    ('clip', (lambda a: tn.clip(a, -0.5, 0.5),
              lambda rng: [np.array([-0.9, -0.3, 0.1, 0.4, 0.8])])),
    ('matmul', (tn.matmul,
                lambda rng: [rng.normal(size=(2, 3, 4)),
                             rng.normal(size=(4, 2))])),
    ('softmax', (lambda a: tn.softmax(a, axis=-1),
                 lambda rng: [rng.normal(size=(3, 4))])),
    ('sum', (lambda a: tn.sum(a, axis=1),
             lambda rng: [rng.normal(size=(2, 3))])),
    ('mean', (lambda a: tn.mean(a, axis=0, keepdims=True),
              lambda rng: [rng.normal(size=(3, 2))])),
    ('variance', (lambda a: tn.variance(a, axis=-1),
                  lambda rng: [rng.normal(size=(2, 5))])),
    ('max', (lambda a: tn.maximum(a, axis=1),
             lambda rng: [_distinct(rng, (3, 4))])),
    ('reshape', (lambda a: tn.reshape(a, (3, 2)),
                 lambda rng: [rng.normal(size=(2, 3))])),
    ('transpose', (lambda a: tn.transpose(a, (2, 0, 1)),
                   lambda rng: [rng.normal(size=(2, 3, 4))])),
    ('concat', (lambda a, b: tn.concat([a, b], axis=1),
                lambda rng: [rng.normal(size=(2, 3)),
                             rng.normal(size=(2, 1))])),
    ('getitem', (lambda a: a[np.array([0, 2, 0])],
                 lambda rng: [rng.normal(size=(3, 2))])),
    ('masked_fill', (lambda a: tn.masked_fill(a, np.array([True, False,
                                                           False]), 0.),
                     lambda rng: [rng.normal(size=(2, 3))])),
])


def check_gradient_rules(seed=0):
    """One finite-difference check per registered gradient rule."""
    results = list()
    for op in tn.GRADIENT_RULES:
        name = 'gradient rule {}'.format(op)
        if op not in OP_CASES:
            results.append(CheckResult(name, False, 'no check for this rule'))
            continue
        func, build = OP_CASES[op]
        rng = np.random.default_rng(seed)
        try:
            errors = gradient_check(func, build(rng), rng)
        except Exception as err:
            results.append(CheckResult(name, False, 'raised {}: {}'.format(
                type(err).__name__, err)))
            continue
        worst = max(errors)
        results.append(CheckResult(name, worst < GRAD_RTOL,
                                   'max relative error {:.2e}'.format(worst)))
    return results


def toy_model_config(seed=0, **changes):
    """The small configuration used for the full-model gradient check."""
    fields = dict(lookback=16, horizon=4, patch_len=4, d_model=8,
                  n_experts=4, top_k=2, n_shared=1, n_heads=2, tau=0.,
                  seed=seed)
    fields.update(changes)
    return ModelConfig(**fields)


@contextmanager
def _frozen_identity(scores):
    """Use ``s / s0`` with fixed s0 as the straight-through identity.

    Its finite differences equal the straight-through gradient.

    """
    inverse = 1.0 / scores
    original = replacement.straight_through_identity
    replacement.straight_through_identity = lambda s: s * inverse
    try:
        yield
    finally:
        replacement.straight_through_identity = original


def check_model_gradient(seed=0, n_channels=2):
    """Finite-difference check of every parameter of a toy model.

    The token filter's identity is exactly 1, so its true derivative is 0;
    finite differences are therefore taken with the identity replaced by
    ``s / s0``, whose derivative is the straight-through one.

    """
    rng = np.random.default_rng(seed)
    model = SeerModel(toy_model_config(seed))
    X = rng.normal(size=(n_channels, model.cfg.lookback)).cumsum(axis=1)

    out = model(X)
    weights = rng.standard_normal(out.shape)
    model.zero_grad()
    tn.backward(tn.sum(out * weights))
    scores = model.last_trace.filter_mask.scores.values.copy()

    def loss():
        with tn.no_grad():
            return float(np.sum(model(X).values * weights))

    results = list()
    with _frozen_identity(scores):
        for name, param in model.named_parameters():
            analytic = (np.zeros(param.shape) if param.grad is None
                        else param.grad.copy())
            numeric = np.zeros(param.shape)
            for idx in np.ndindex(*param.shape):
                original = param.values[idx]
                param.values[idx] = original + FD_STEP
                up = loss()
                param.values[idx] = original - FD_STEP
                down = loss()
                param.values[idx] = original
                numeric[idx] = (up - down) / (2 * FD_STEP)
            error = _relative_error(analytic, numeric)
            results.append(CheckResult(
                'model gradient {}'.format(name), error < GRAD_RTOL,
                'relative error {:.2e}'.format(error)))
    return results


def check_straight_through(seed=0):
    """Identity values are 1 and the scores receive g / score."""
    rng = np.random.default_rng(seed)
    scores = tn.Tensor(rng.uniform(0.05, 0.95, size=(3, 5)),
                       requires_grad=True)
    identity = straight_through_identity(scores)
    g = rng.normal(size=scores.shape)
    tn.backward(tn.sum(identity * g))
    value_error = float(np.max(np.abs(identity.values - 1.)))
    grad_error = float(np.max(np.abs(scores.grad - g / scores.values)))
    return [CheckResult('straight-through value', value_error <= 1e-12,
                        'max |identity - 1| = {:.1e}'.format(value_error)),
            CheckResult('straight-through gradient', grad_error <= 1e-12,
                        'max error {:.1e}'.format(grad_error))]


def check_gating(seed=0):
    """Top-k weights, the k = M case and noise-free inference."""
    rng = np.random.default_rng(seed)
    tokens = rng.normal(size=(20, 4))
    cfg = MoEConfig(d_model=8, n_experts=4, top_k=2, n_shared=1)
    embedding = AugmentedPatchEmbedding(4, cfg, rng)
    decision = embedding.noisy_gate(tokens, training=True, rng=rng)
    positive = (decision.gates.values > 0).sum(axis=1)
    sums = decision.gates.values.sum(axis=1)
    results = [CheckResult(
        'gating selects k experts',
        bool(np.all(positive == cfg.top_k) and
             np.allclose(sums, 1., rtol=0, atol=1e-9)),
        'positive weights per token {}'.format(sorted(set(positive))))]

    full = AugmentedPatchEmbedding(4, MoEConfig(8, 4, 4, 1),
                                   np.random.default_rng(seed))
    gates = full.noisy_gate(tokens).gates.values
    with tn.no_grad():
        dense = tn.softmax(full.gate_mu(tokens), axis=-1).values
    results.append(CheckResult('gating with k = M is a softmax',
                               bool(np.allclose(gates, dense, rtol=0,
                                                atol=1e-12))))

    first = embedding.noisy_gate(tokens).gates.values
    second = embedding.noisy_gate(tokens).gates.values
    results.append(CheckResult('gating inference is deterministic',
                               bool(np.array_equal(first, second))))
    return results


def check_replacement(seed=0):
    """Masks of ones keep, zeros replace, mixed masks touch masked rows."""
    rng = np.random.default_rng(seed)
    tokens = rng.normal(size=(2, 5, 4))
    prototypes = rng.normal(size=(2, 4))
    keep = replace_tokens(tokens, prototypes, np.ones((2, 5))).values
    swap = replace_tokens(tokens, prototypes, np.zeros((2, 5))).values
    mask = rng.random((2, 5)) > 0.5
    mixed = replace_tokens(tokens, prototypes, mask.astype(float)).values
    mixed_ok = (np.array_equal(mixed[mask], tokens[mask]) and
                np.array_equal(mixed[~mask],
                               np.broadcast_to(prototypes[:, None],
                                               tokens.shape)[~mask]))
    return [CheckResult('replacement with all-ones mask',
                        bool(np.array_equal(keep, tokens))),
            CheckResult('replacement with all-zeros mask',
                        bool(np.array_equal(
                            swap, np.broadcast_to(prototypes[:, None],
                                                  tokens.shape)))),
            CheckResult('replacement with mixed mask', bool(mixed_ok))]


def check_causality(seed=0):
    """No attention to later positions; equal tokens stay distinct."""
    rng = np.random.default_rng(seed)
    attention = MultiHeadAttention(AttentionConfig(2, 8, causal=True), rng)
    attention(rng.normal(size=(3, 6, 8)))
    above = np.triu_indices(6, k=1)
    leak = float(np.max(np.abs(attention.last_weights_[..., above[0],
                                                      above[1]])))
    results = [CheckResult('causal weights above diagonal are 0', leak == 0.,
                           'max weight {:.1e}'.format(leak))]

    block = ReplacedAttention(4, AttentionConfig(2, 8), rng)
    prototype = rng.normal(size=(1, 8))
    replaced = rng.normal(size=(1, 4, 8))
    replaced[0, 1] = replaced[0, 3] = prototype[0]
    with tn.no_grad():
        out = block.causal_attend(tn.Tensor(replaced),
                                  tn.Tensor(prototype)).values
    gap = float(np.max(np.abs(out[0, 2] - out[0, 4])))
    results.append(CheckResult('replaced tokens stay distinct', gap > 1e-8,
                               'max difference {:.2e}'.format(gap)))
    return results


def _fixture_series(rng, T, N=3):
    return rng.normal(size=(T, N)) * np.arange(1, N + 1) + 10.


def check_perturbations(seed=0):
    """Counting formulas, moments and grids of the corruption algorithms."""
    rng = np.random.default_rng(seed)
    results = list()
    X = _fixture_series(rng, 100)
    identity = all(np.array_equal(f(X), X) for f in (
        lambda x: inject_white_noise(x, 0., seed=seed),
        lambda x: inject_anomalies(x, 0., r_out=0., seed=seed),
        lambda x: inject_missing(x, 0., seed=seed)))
    results.append(CheckResult('zero ratio is the identity', identity))

    changed = (inject_white_noise(X, 0.1, seed=seed) != X).sum(axis=0)
    results.append(CheckResult('white noise count',
                               bool(np.all(changed == 10)),
                               'modified per channel {}'.format(changed)))

    X24 = _fixture_series(rng, 24)
    zeroed = (inject_missing(X24, 0.5, 12, seed=seed) == 0).sum(axis=0)
    results.append(CheckResult('missing segment count',
                               bool(np.all(zeroed == 12)),
                               'zeroed per channel {}'.format(zeroed)))

    diff = inject_anomalies(X24, 0.5, 12, 0., ANOMALY_SCALE, seed) - X24
    expected = ANOMALY_SCALE * X24.std(axis=0)
    segment_ok = all(
        np.sum(diff[:, c] != 0) == 12 and
        np.allclose(np.abs(diff[diff[:, c] != 0, c]), expected[c])
        for c in range(X24.shape[1]))
    results.append(CheckResult('anomaly segment', bool(segment_ok)))

    # alternating -1, 1 has a biased std of exactly 1
    base = np.tile([[-1.], [1.]], (50000, 1))
    noise = inject_white_noise(base, 1., 1., seed) - base
    moments_ok = abs(noise.mean()) <= 0.02 and abs(noise.std() - 1.) <= 0.02
    results.append(CheckResult('white noise moments', bool(moments_ok),
                               'mean {:.4f}, std {:.4f}'.format(
                                   noise.mean(), noise.std())))

    one = inject_distribution_shift(X, 1, SHIFT_SCALE, seed) - X
    results.append(CheckResult(
        'single shift keeps differences',
        bool(np.allclose(one - one[0], 0., rtol=0, atol=1e-9) and
             np.all(np.abs(one[0]) <= SHIFT_SCALE * X.std(axis=0)))))

    X10 = _fixture_series(rng, 10)
    offset = inject_distribution_shift(X10, 3, SHIFT_SCALE, seed) - X10
    blocks_ok = (np.all(offset[9] == 0) and
                 all(np.allclose(np.diff(offset[k:k + 3], 2, axis=0), 0.,
                                 rtol=0, atol=1e-9) for k in (0, 3, 6)))
    results.append(CheckResult('shift blocks', bool(blocks_ok)))

    grids_ok = (tuple(NOISE_RATIOS) == (0., 0.01, 0.05, 0.10, 0.15) and
                tuple(ANOMALY_RATIOS) == tuple(NOISE_RATIOS) and
                tuple(MISSING_RATIOS) == tuple(NOISE_RATIOS) and
                tuple(SHIFT_SEGMENTS) == (0, 1, 3, 5, 10) and
                ANOMALY_SEGMENT_LEN == 12 and OUTLIER_RATIO == 0.005 and
                ANOMALY_SCALE == 2. and SHIFT_SCALE == 5.)
    levels = sweep(X, 'white-noise', seed=seed)
    grids_ok = grids_ok and len(levels) == 5 and np.array_equal(levels[0][1],
                                                                X)
    results.append(CheckResult('default grids', bool(grids_ok)))
    return results


CHECKS = OrderedDict([
    ('gradients', check_gradient_rules),
    ('model', check_model_gradient),
    ('straight-through', check_straight_through),
    ('gating', check_gating),
    ('replacement', check_replacement),
    ('causality', check_causality),
    ('perturbations', check_perturbations),
])


def run_checks(groups=None, seed=0):
    """Run check groups and tabulate the results.

    Parameters
    ----------
    groups : list of str | None
        Keys of ``CHECKS``; all groups if None.
    seed : int

    Returns
    -------
    report : pandas.DataFrame
        Columns group, check, passed and detail.

    """
    groups = list(CHECKS) if groups is None else groups
    rows = list()
    for group in groups:
        if group not in CHECKS:
            raise ValueError('unknown check group "{}", use {}'
                             .format(group, list(CHECKS)))
        for result in CHECKS[group](seed=seed):
            log = logger.info if result.passed else logger.error
            log('%s %s %s', 'PASS' if result.passed else 'FAIL',
                result.name, result.detail)
            rows.append((group, result.name, result.passed, result.detail))
    return pd.DataFrame(rows, columns=['group', 'check', 'passed', 'detail'])
