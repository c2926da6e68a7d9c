"""The full forecaster: composition, L1 loss and the training loop.

A forward pass runs

    instance_normalize -> make_patches -> patch embedding
                       -> series embedding (prototypes)
    -> score_tokens -> build_mask -> replace_tokens
    -> causal_attend -> refine_msa -> reduce_features -> flatten_head
    -> denormalize

on windows of shape (N, T) or batches of shape (B, N, T).

"""
import logging
import dataclasses
from dataclasses import dataclass

import numpy as np
import pandas as pd

from seer_forecast import tensor as tn
from seer_forecast.define_settings import (LOOKBACK, HORIZONS, PATCH_LEN,
                                           PADDING, D_MODEL, REDUCTION_RATIO,
                                           N_EXPERTS, TOP_K, N_SHARED, N_HEADS,
                                           TAU, EPS_NORM, BATCH_SIZE,
                                           MIN_BATCH_SIZE, EPOCHS, PATIENCE,
                                           LR)
from seer_forecast.embedding import (MoEConfig, AugmentedPatchEmbedding,
                                     LinearPatchEmbedding, SeriesEmbedding,
                                     SimpleSeriesEmbedding)
from seer_forecast.errors import ConfigError, ShapeError, NonFiniteError
from seer_forecast.layers import Module, Linear
from seer_forecast.optim import Adam
from seer_forecast.preprocess import (PatchConfig, instance_normalize,
                                      denormalize, make_patches)
from seer_forecast.replacement import (AttentionConfig, TokenFilter,
                                       ReplacedAttention, build_mask,
                                       replace_tokens, check_threshold)

logger = logging.getLogger(__name__)

SERIES_EMBEDDINGS = ('augmented', 'simple')


@dataclass
class ModelConfig:
    """Everything needed to build a :class:`SeerModel`.

    Attributes
    ----------
    lookback : int
        Window length T.
    horizon : int
        Forecast length F.
    patch_len : int
        Patch length p.
    padding : str
        'front-replicate' or 'strict', see :class:`PatchConfig`.
    d_model : int
        Hidden width d.
    reduction_ratio : float
        Gives ``d_reduced = floor(reduction_ratio * d_model)`` unless
        `d_reduced` is set.
    d_reduced : int | None
        Reduced width for the flatten head, ``1 <= d_reduced <= d_model``.
    d_pool : int | None
        Width of the pooled core; defaults to ``d_model // 2``.
    n_experts, top_k, n_shared : int
        Mixture-of-experts layout.
    noisy_gating : bool
        Add gate noise during training.
    n_heads : int
        Attention heads; must divide `d_model`.
    tau : float
        Token filter threshold in [0, 1).
    seed : int
        Seed of the parameter initialization.
    use_moe : bool
        False swaps the MoE for a single linear patch embedding.
    series_embedding : str
        'augmented' (pooled prototypes) or 'simple'.
    token_filter : bool
        False keeps every token, the mask is all ones.
    feature_reduction : bool
        False skips the reduction layer, the head sees width d.
    positional_embedding : bool
        Learned positions before the causal attention block.

    """

    lookback: int = LOOKBACK
    horizon: int = HORIZONS[0]
    patch_len: int = PATCH_LEN
    padding: str = PADDING
    d_model: int = D_MODEL
    reduction_ratio: float = REDUCTION_RATIO
    d_reduced: int = None
    d_pool: int = None
    n_experts: int = N_EXPERTS
    top_k: int = TOP_K
    n_shared: int = N_SHARED
    noisy_gating: bool = True
    n_heads: int = N_HEADS
    tau: float = TAU
    seed: int = 0
    use_moe: bool = True
    series_embedding: str = 'augmented'
    token_filter: bool = True
    feature_reduction: bool = True
    positional_embedding: bool = True

    def __post_init__(self):
        if self.lookback < 2:
            raise ConfigError('data.lookback', 'must be >= 2, got {}'
                              .format(self.lookback))
        if self.horizon < 1:
            raise ConfigError('data.horizons', 'must be >= 1, got {}'
                              .format(self.horizon))
        if self.d_model < 1:
            raise ConfigError('model.d_model', 'must be >= 1, got {}'
                              .format(self.d_model))
        if self.d_reduced is None:
            if not self.feature_reduction:
                self.d_reduced = self.d_model
            else:
                ratio = float(self.reduction_ratio)
                if not 0. < ratio <= 1.:
                    raise ConfigError('model.reduction_ratio', 'must be in '
                                      '(0, 1], got {}'.format(ratio))
                self.d_reduced = max(1, int(np.floor(ratio * self.d_model)))
        if not 1 <= self.d_reduced <= self.d_model:
            raise ConfigError('model.d_reduced', 'need 1 <= d_reduced <= '
                              'd_model={}, got {}'
                              .format(self.d_model, self.d_reduced))
        if not self.feature_reduction and self.d_reduced != self.d_model:
            raise ConfigError('model.d_reduced', 'must equal d_model when '
                              'feature_reduction is off')
        if self.d_pool is None:
            self.d_pool = max(1, self.d_model // 2)
        if self.d_pool < 1:
            raise ConfigError('model.d_pool', 'must be >= 1, got {}'
                              .format(self.d_pool))
        if self.series_embedding not in SERIES_EMBEDDINGS:
            raise ConfigError('model.series_embedding', 'must be one of {}, '
                              'got "{}"'.format(SERIES_EMBEDDINGS,
                                                self.series_embedding))
        self.tau = check_threshold(self.tau)
        # building the sub-configs validates them
        self.patch
        self.moe
        self.attention

    @property
    def patch(self):
        """The :class:`PatchConfig`."""
        return PatchConfig(self.patch_len, self.padding)

    @property
    def moe(self):
        """The :class:`MoEConfig`."""
        return MoEConfig(d_model=self.d_model, n_experts=self.n_experts,
                         top_k=self.top_k, n_shared=self.n_shared,
                         noisy_gating=self.noisy_gating)

    @property
    def attention(self):
        """The :class:`AttentionConfig`."""
        return AttentionConfig(n_heads=self.n_heads, d_model=self.d_model,
                               positional_embedding=self.positional_embedding)

    @property
    def n_patches(self):
        """Number of patch tokens n per channel."""
        return self.patch.n_patches(self.lookback)

    def to_dict(self):
        """Return the fields as a plain dict."""
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, fields):
        """Build a config from :meth:`to_dict` output, rejecting unknowns."""
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(fields) - known)
        if unknown:
            raise ConfigError('model', 'unknown field(s) {}'.format(unknown))
        return cls(**fields)

    def with_horizon(self, horizon):
        """Copy of this config for another horizon."""
        return dataclasses.replace(self, horizon=int(horizon))


@dataclass
class ForwardTrace:
    """Intermediate results of the most recent forward pass."""

    stats: object
    patches: np.ndarray
    tokens: tn.Tensor
    prototypes: object
    filter_mask: object
    mask: tn.Tensor
    replaced: tn.Tensor
    attended: tn.Tensor
    gate: object


class SeerModel(Module):
    """Patch-replacement forecaster for one horizon.

    Parameters
    ----------
    cfg : ModelConfig
        Architecture; ``cfg.seed`` seeds the initialization.

    """

    def __init__(self, cfg):
        self._cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        d = cfg.d_model
        n = cfg.n_patches
        if cfg.use_moe:
            self.patch_embedding = AugmentedPatchEmbedding(cfg.patch_len,
                                                           cfg.moe, rng)
        else:
            self.patch_embedding = LinearPatchEmbedding(cfg.patch_len, d, rng)
        if cfg.series_embedding == 'augmented':
            self.series_embedding = SeriesEmbedding(cfg.lookback, d,
                                                    cfg.d_pool, rng)
        else:
            self.series_embedding = SimpleSeriesEmbedding(cfg.lookback, d, rng)
        self.token_filter = TokenFilter(d, rng)
        self.attention = ReplacedAttention(n, cfg.attention, rng)
        if cfg.feature_reduction:
            self.reduction = Linear(d, cfg.d_reduced, rng)
        else:
            self.reduction = None
        self.head = Linear((n + 1) * cfg.d_reduced, cfg.horizon, rng)
        self._trace = None

    @property
    def cfg(self):
        """The :class:`ModelConfig` this model was built from."""
        return self._cfg

    @property
    def last_trace(self):
        """:class:`ForwardTrace` of the latest forward pass, or None."""
        return self._trace

    def reduce_features(self, attended):
        """Map tokens from width d to d_reduced on the last axis.

        Without feature reduction the input is returned as is.

        """
        if self.reduction is None:
            return tn.as_tensor(attended)
        return self.reduction(attended)

    def flatten_head(self, reduced):
        """Flatten each channel's tokens and project to the horizon.

        Parameters
        ----------
        reduced : Tensor, shape (..., N, n+1, d~)

        Returns
        -------
        Y : Tensor, shape (..., N, F)

        """
        reduced = tn.as_tensor(reduced)
        return self.head(tn.flatten(reduced, start_axis=reduced.ndim - 2))

    def forward(self, X, training=False, rng=None, tau=None):
        """Forecast the horizon from lookback windows.

        Parameters
        ----------
        X : ndarray, shape (N, T) or (B, N, T)
            Raw lookback windows.
        training : bool
            Use gate noise and stochastic pooling. Needs `rng`.
        rng : numpy.random.Generator | int | None
            Source of the training randomness.
        tau : float | None
            Threshold override; defaults to ``cfg.tau``.

        Returns
        -------
        Y : Tensor, shape (N, F) or (B, N, F)

        """
        cfg = self._cfg
        X = np.asarray(X, dtype=np.float64)
        if X.ndim not in (2, 3) or X.shape[-1] != cfg.lookback:
            raise ShapeError('expected windows of shape (N, {0}) or '
                             '(B, N, {0}), got {1}'
                             .format(cfg.lookback, X.shape))
        if training:
            if rng is None:
                raise ValueError('training mode needs an rng or a seed')
            rng = np.random.default_rng(rng)

        X_norm, stats = instance_normalize(X, EPS_NORM)
        patches = make_patches(X_norm, cfg.patch)
        tokens = self.patch_embedding(patches, training=training, rng=rng)
        prototypes = self.series_embedding(X_norm, training=training, rng=rng)

        if cfg.token_filter:
            verdict = self.token_filter.score_tokens(
                tokens, cfg.tau if tau is None else tau)
            mask = build_mask(verdict.indicators, verdict.identity)
        else:
            verdict = None
            mask = tn.Tensor(np.ones(tokens.shape[:-1]))
        replaced = replace_tokens(tokens, prototypes.prototypes, mask)

        attended = self.attention(replaced, prototypes.prototypes)
        Y_norm = self.flatten_head(self.reduce_features(attended))
        self._trace = ForwardTrace(
            stats=stats, patches=patches, tokens=tokens,
            prototypes=prototypes, filter_mask=verdict, mask=mask,
            replaced=replaced, attended=attended,
            gate=self.patch_embedding.last_decision_)
        return denormalize(Y_norm, stats)


def l1_loss(prediction, target):
    """Mean absolute deviation over all entries.

    The subgradient at ``prediction == target`` is 0.

    """
    prediction = tn.as_tensor(prediction)
    target = tn.as_tensor(target)
    if prediction.shape != target.shape:
        raise ShapeError('prediction {} and target {} differ in shape'
                         .format(prediction.shape, target.shape))
    return tn.mean(tn.absolute(prediction - target))


def forecast(model, X, batch_size=BATCH_SIZE):
    """Inference-mode predictions as an ndarray, without recording a graph.

    Parameters
    ----------
    model : SeerModel
    X : ndarray, shape (N, T) or (B, N, T)
    batch_size : int
        Windows per forward pass for batched input.

    Returns
    -------
    Y : ndarray, shape (N, F) or (B, N, F)

    """
    X = np.asarray(X, dtype=np.float64)
    with tn.no_grad():
        if X.ndim == 2:
            return model(X).numpy()
        if len(X) == 0:
            return np.zeros((0, X.shape[1], model.cfg.horizon))
        parts = [model(X[start:start + batch_size]).numpy()
                 for start in range(0, len(X), batch_size)]
    return np.concatenate(parts, axis=0)


def evaluate_loss(model, X, Y, batch_size=BATCH_SIZE):
    """Mean absolute error of inference predictions over all windows."""
    prediction = forecast(model, X, batch_size)
    return float(np.mean(np.abs(prediction - np.asarray(Y))))


@dataclass
class TrainResult:
    """Outcome of :func:`train`.

    Attributes
    ----------
    trace : pandas.DataFrame
        One row per finished epoch: epoch, train_loss, val_loss, batch_size.
    best_epoch : int
        Epoch whose parameters the model holds (0 means the initial ones).
    stopped_early : bool

    """

    trace: pd.DataFrame
    best_epoch: int
    stopped_early: bool


TRACE_COLUMNS = ['epoch', 'train_loss', 'val_loss', 'batch_size']


def _check_pairs(X, Y, model, what):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.ndim != 3 or Y.ndim != 3 or len(X) != len(Y):
        raise ShapeError('{} windows need shapes (B, N, T) and (B, N, F), '
                         'got {} and {}'.format(what, X.shape, Y.shape))
    if Y.shape[-1] != model.cfg.horizon:
        raise ShapeError('{} targets have horizon {}, the model {}'
                         .format(what, Y.shape[-1], model.cfg.horizon))
    return X, Y


def train(model, train_windows, val_windows=None, epochs=EPOCHS,
          batch_size=BATCH_SIZE, lr=LR, seed=0, patience=PATIENCE,
          min_batch_size=MIN_BATCH_SIZE):
    """Fit `model` with Adam on the L1 loss.

    Every epoch visits the training windows in a seeded random order. If
    a batch raises MemoryError the batch size is halved (not below
    `min_batch_size`) and the batch is retried. With validation windows
    the parameters of the best validation epoch are restored at the end
    and training stops after `patience` epochs without improvement.

    Parameters
    ----------
    model : SeerModel
        Trained in place.
    train_windows : tuple of ndarray
        ``(X, Y)`` of shapes (B, N, T) and (B, N, F).
    val_windows : tuple of ndarray | None
        Same layout, used for early stopping.
    epochs : int
        Upper bound on the number of epochs; 0 leaves the model untouched.
    batch_size : int
    lr : float
        Adam learning rate.
    seed : int
        Seeds the shuffling, gate noise and pooling draws.
    patience : int
    min_batch_size : int

    Returns
    -------
    result : TrainResult

    Raises
    ------
    NonFiniteError
        If a batch loss is NaN or infinite.

    """
    X, Y = _check_pairs(*train_windows, model, 'training')
    if len(X) == 0:
        raise ShapeError('no training windows')
    if val_windows is not None:
        X_val, Y_val = _check_pairs(*val_windows, model, 'validation')
        if len(X_val) == 0:
            val_windows = None
    if batch_size < 1 or min_batch_size < 1:
        raise ConfigError('training.batch_size', 'must be >= 1, got {}'
                          .format(batch_size))

    rng = np.random.default_rng(seed)
    optimizer = Adam(model.parameters(), lr=lr)
    logger.info('training %d parameters on %d windows for up to %d epochs',
                model.n_parameters(), len(X), epochs)
    for row in model.describe().itertuples(index=False):
        logger.debug('  %-45s %-12s %d', row.name, row.shape, row.count)

    rows = list()
    best_loss = np.inf
    best_state = model.state_dict()
    best_epoch = 0
    waited = 0
    stopped_early = False
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(X))
        total = 0.
        start = 0
        while start < len(order):
            index = order[start:start + batch_size]
            try:
                optimizer.zero_grad()
                loss = l1_loss(model(X[index], training=True, rng=rng),
                               Y[index])
                if not loss.is_finite():
                    raise NonFiniteError(
                        'loss is {} at epoch {}, windows {}..{}'
                        .format(loss.item(), epoch, start,
                                start + len(index) - 1))
                loss.backward()
                optimizer.step()
            except MemoryError:
                if batch_size // 2 < min_batch_size:
                    raise
                batch_size //= 2
                logger.warning('out of memory, halving batch size to %d',
                               batch_size)
                continue
            total += loss.item() * len(index)
            start += len(index)

        train_loss = total / len(X)
        if val_windows is not None:
            val_loss = evaluate_loss(model, X_val, Y_val, batch_size)
        else:
            val_loss = np.nan
        rows.append((epoch, train_loss, val_loss, batch_size))
        logger.info('epoch %d: train loss %.6f, val loss %.6f',
                    epoch, train_loss, val_loss)

        if val_windows is None:
            best_epoch = epoch
            continue
        if val_loss < best_loss:
            best_loss = val_loss
            best_state = model.state_dict()
            best_epoch = epoch
            waited = 0
        else:
            waited += 1
            if waited >= patience:
                logger.info('early stop after epoch %d, best epoch %d',
                            epoch, best_epoch)
                stopped_early = True
                break

    if val_windows is not None and rows:
        model.load_state_dict(best_state)
    trace = pd.DataFrame(rows, columns=TRACE_COLUMNS)
    return TrainResult(trace=trace, best_epoch=best_epoch,
                       stopped_early=stopped_early)
