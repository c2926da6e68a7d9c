"""Learnable patch replacement: token scoring, substitution and attention.

Every patch token gets a quality score. Tokens scoring at or below the
threshold are replaced by their channel's prototype. The binary decision
itself has no gradient, so the mask is multiplied by an all-ones tensor
built as ``scores * (1 / detach(scores))``: numerically 1, but its gradient
reaches the scores as ``g / score``.

The replaced sequence, with the prototype prepended as a global token, then
goes through a causal multi-head attention block and a regular one.

"""
import logging
from dataclasses import dataclass

import numpy as np

from seer_forecast import tensor as tn
from seer_forecast.define_settings import TAU, SCORE_EPS, N_HEADS, D_MODEL
from seer_forecast.errors import ConfigError, ShapeError
from seer_forecast.layers import Module, Linear, LayerNorm, Parameter

logger = logging.getLogger(__name__)


@dataclass
class FilterMask:
    """Per-token verdict of the token filter.

    Attributes
    ----------
    scores : Tensor, shape (..., N, n)
        Clamped sigmoid scores in ``[SCORE_EPS, 1 - SCORE_EPS]``.
    indicators : ndarray of bool, shape (..., N, n)
        True where the token is kept (``score > threshold``).
    identity : Tensor, shape (..., N, n)
        Exactly 1 in value, gradient-coupled to ``scores``.
    threshold : float

    """

    scores: tn.Tensor
    indicators: np.ndarray
    identity: tn.Tensor
    threshold: float

    @property
    def kept_per_channel(self):
        """Number of kept tokens per channel, shape (..., N)."""
        return self.indicators.sum(axis=-1)


@dataclass
class AttentionConfig:
    """Multi-head attention layout.

    Attributes
    ----------
    n_heads : int
        Must divide ``d_model``.
    d_model : int
    causal : bool
        Mask attention to future positions.
    positional_embedding : bool
        Add learned position embeddings before the causal block.

    """

    n_heads: int = N_HEADS
    d_model: int = D_MODEL
    causal: bool = False
    positional_embedding: bool = True

    def __post_init__(self):
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise ConfigError('attention.n_heads', '{} heads do not divide '
                              'd_model={}'.format(self.n_heads, self.d_model))

    @property
    def head_dim(self):
        """Width of a single head."""
        return self.d_model // self.n_heads


def check_threshold(tau):
    """Raise ConfigError unless ``0 <= tau < 1``."""
    if not 0. <= tau < 1.:
        raise ConfigError('model.tau', 'must be in [0, 1), got {}'
                          .format(tau))
    return float(tau)


def straight_through_identity(scores):
    """Return a tensor equal to 1 whose gradient reaches `scores` as g/score.

    The product ``scores * (1 / detach(scores))`` can be off from 1 by an
    ulp; the detached correction term makes the value exactly 1 without
    changing the gradient.

    """
    inverse = 1.0 / tn.detach(scores)
    product = scores * inverse
    return product + (1.0 - product.values)


def build_mask(indicators, identity):
    """Couple binary indicators to the gradient-carrying identity.

    Returns
    -------
    mask : Tensor
        Equal to the indicators in value; gradient flows only where they
        are 1.

    """
    indicators = np.asarray(indicators)
    if indicators.shape != identity.shape:
        raise ShapeError('indicators {} and identity {} differ in shape'
                         .format(indicators.shape, identity.shape))
    return identity * indicators.astype(np.float64)


def replace_tokens(tokens, prototypes, mask):
    """Swap filtered tokens for their channel prototype.

    Parameters
    ----------
    tokens : Tensor, shape (..., N, n, d)
    prototypes : Tensor, shape (..., N, d)
    mask : Tensor | ndarray, shape (..., N, n)
        1 keeps the token, 0 replaces it. Broadcast across d.

    Returns
    -------
    replaced : Tensor, shape (..., N, n, d)
        ``tokens * mask + prototype * (1 - mask)``.

    """
    tokens = tn.as_tensor(tokens)
    prototypes = tn.as_tensor(prototypes)
    mask = tn.as_tensor(mask)
    if mask.shape != tokens.shape[:-1]:
        raise ShapeError('mask {} does not fit tokens {}'
                         .format(mask.shape, tokens.shape))
    if prototypes.shape != tokens.shape[:-2] + tokens.shape[-1:]:
        raise ShapeError('prototypes {} do not fit tokens {}'
                         .format(prototypes.shape, tokens.shape))
    column = tn.reshape(mask, mask.shape + (1,))
    proto = tn.reshape(prototypes, prototypes.shape[:-1] +
                       (1, prototypes.shape[-1]))
    return tokens * column + proto * (1.0 - column)


class TokenFilter(Module):
    """Score tokens with a linear map and a sigmoid."""

    def __init__(self, d_model, rng, score_eps=SCORE_EPS):
        self.score_eps = score_eps
        self.linear = Linear(d_model, 1, rng)

    def score_tokens(self, tokens, tau=TAU):
        """Score every token and decide which to keep.

        Parameters
        ----------
        tokens : Tensor, shape (..., N, n, d)
        tau : float
            Threshold in [0, 1). A token is kept if its score exceeds it.

        Returns
        -------
        mask : FilterMask

        """
        tau = check_threshold(tau)
        logits = self.linear(tokens)
        scores = tn.sigmoid(tn.reshape(logits, logits.shape[:-1]))
        scores = tn.clip(scores, self.score_eps, 1.0 - self.score_eps)
        return FilterMask(scores=scores, indicators=scores.values > tau,
                          identity=straight_through_identity(scores),
                          threshold=tau)

    def forward(self, tokens, tau=TAU):
        """Alias for :meth:`score_tokens`."""
        return self.score_tokens(tokens, tau)


def causal_mask(length):
    """Boolean (length, length) array, True strictly above the diagonal."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


class MultiHeadAttention(Module):
    """Pre-norm multi-head self-attention with a residual connection.

    The attention weights of the last call are kept in ``last_weights_``
    with shape (..., heads, L, L).

    """

    def __init__(self, cfg, rng):
        self.cfg = cfg
        d = cfg.d_model
        self.norm = LayerNorm(d)
        self.query = Linear(d, d, rng)
        self.key = Linear(d, d, rng)
        self.value = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.last_weights_ = None

    def _split_heads(self, x):
        lead = x.shape[:-1]
        x = tn.reshape(x, lead + (self.cfg.n_heads, self.cfg.head_dim))
        return tn.swapaxes(x, -3, -2)

    def forward(self, x):
        """Attend over the second to last axis of `x` (..., L, d)."""
        x = tn.as_tensor(x)
        length = x.shape[-2]
        h = self.norm(x)
        q = self._split_heads(self.query(h))
        k = self._split_heads(self.key(h))
        v = self._split_heads(self.value(h))

        scores = tn.matmul(q, tn.swapaxes(k, -1, -2))
        scores = scores / np.sqrt(self.cfg.head_dim)
        if self.cfg.causal:
            scores = tn.masked_fill(scores, causal_mask(length), -np.inf)
        weights = tn.softmax(scores, axis=-1)
        self.last_weights_ = weights.values

        context = tn.swapaxes(tn.matmul(weights, v), -3, -2)
        context = tn.reshape(context, x.shape)
        return x + self.out(context)


class ReplacedAttention(Module):
    """Causal block over [prototype; replaced tokens], then a full block.

    Parameters
    ----------
    n_patches : int
        Number of patch tokens n; sequences have n + 1 positions.
    cfg : AttentionConfig
        Heads and width. ``causal`` is ignored: the first block is always
        causal and the refinement block never is.
    rng : numpy.random.Generator

    """

    def __init__(self, n_patches, cfg, rng):
        self.n_patches = n_patches
        if cfg.positional_embedding:
            self.position = Parameter(
                rng.normal(0., 0.02, size=(n_patches + 1, cfg.d_model)))
        else:
            self.position = None
        self.causal_block = MultiHeadAttention(
            AttentionConfig(cfg.n_heads, cfg.d_model, causal=True,
                            positional_embedding=cfg.positional_embedding),
            rng)
        self.refine_block = MultiHeadAttention(
            AttentionConfig(cfg.n_heads, cfg.d_model, causal=False,
                            positional_embedding=False),
            rng)

    def causal_attend(self, replaced, prototypes):
        """Prepend the prototype and run causal attention.

        Parameters
        ----------
        replaced : Tensor, shape (..., N, n, d)
        prototypes : Tensor, shape (..., N, d)

        Returns
        -------
        out : Tensor, shape (..., N, n + 1, d)

        """
        if replaced.shape[-2] != self.n_patches:
            raise ShapeError('expected {} patches, got {}'
                             .format(self.n_patches, replaced.shape[-2]))
        lead = prototypes.shape[:-1]
        head = tn.reshape(prototypes, lead + (1, prototypes.shape[-1]))
        sequence = tn.concat([head, replaced], axis=-2)
        if self.position is not None:
            sequence = sequence + self.position
        return self.causal_block(sequence)

    def refine_msa(self, sequence):
        """Full self-attention over all n + 1 positions, shape preserved."""
        return self.refine_block(sequence)

    def forward(self, replaced, prototypes):
        """Run :meth:`causal_attend` then :meth:`refine_msa`."""
        return self.refine_msa(self.causal_attend(replaced, prototypes))
