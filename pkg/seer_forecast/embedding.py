"""Augmented embedding: mixture-of-experts patch tokens and series prototypes.

Patch tokens are embedded by shared experts plus the top-k routed experts
picked by a noisy gate. In parallel every channel is embedded as a whole,
the channels are pooled stochastically into one core representation, and
that core is concatenated back onto each channel to form the per-channel
prototypes that stand in for filtered tokens later on.

"""
import logging
from dataclasses import dataclass

import numpy as np

from seer_forecast import tensor as tn
from seer_forecast.define_settings import D_MODEL, N_EXPERTS, TOP_K, N_SHARED
from seer_forecast.errors import ConfigError, ShapeError
from seer_forecast.layers import Module, Linear, ExpertBank, MLP

logger = logging.getLogger(__name__)


@dataclass
class MoEConfig:
    """Size of the patch-embedding mixture of experts.

    Attributes
    ----------
    d_model : int
        Hidden dimension d of every token.
    n_experts : int
        Number of routed experts M.
    top_k : int
        Experts selected per token, ``1 <= top_k <= n_experts``.
    n_shared : int
        Experts applied to every token regardless of the gate.
    noisy_gating : bool
        Whether Gaussian noise is added to the gate logits in training.

    """

    d_model: int = D_MODEL
    n_experts: int = N_EXPERTS
    top_k: int = TOP_K
    n_shared: int = N_SHARED
    noisy_gating: bool = True

    def __post_init__(self):
        if self.d_model < 1:
            raise ConfigError('model.d_model', 'must be >= 1, got {}'
                              .format(self.d_model))
        if self.n_shared < 0:
            raise ConfigError('moe.n_shared', 'must be >= 0, got {}'
                              .format(self.n_shared))
        if not 1 <= self.top_k <= self.n_experts:
            raise ConfigError('moe.top_k', 'need 1 <= top_k <= n_experts, got '
                              'top_k={} and n_experts={}'
                              .format(self.top_k, self.n_experts))


@dataclass
class GateDecision:
    """Routing result for a batch of tokens.

    Attributes
    ----------
    indices : ndarray of int, shape (tokens, k)
        Selected experts, highest logit first, ties to the lower index.
    weights : ndarray, shape (tokens, k)
        Normalized weights of the selected experts.
    logits : ndarray, shape (tokens, M)
        Gate logits before top-k masking.
    gates : Tensor, shape (tokens, M)
        Dense routing weights, exactly 0 off the selection. Carries the
        gradient back into the gate.

    """

    indices: np.ndarray
    weights: np.ndarray
    logits: np.ndarray
    gates: tn.Tensor


@dataclass
class PrototypeSet:
    """Channel embeddings, pooled core and per-channel prototypes.

    ``channel_embeddings`` and ``prototypes`` have shape (..., N, d);
    ``core`` has shape (..., d_pool) and is None for the simple variant.

    """

    channel_embeddings: tn.Tensor
    core: tn.Tensor
    prototypes: tn.Tensor


def keep_top_k(logits, k):
    """Indices of the k largest logits per row, ties broken by lower index.

    Parameters
    ----------
    logits : ndarray, shape (tokens, M)
    k : int

    Returns
    -------
    indices : ndarray of int, shape (tokens, k)
    keep : ndarray of bool, shape (tokens, M)

    """
    indices = np.argsort(-logits, axis=-1, kind='stable')[..., :k]
    keep = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(keep, indices, True, axis=-1)
    return indices, keep


class AugmentedPatchEmbedding(Module):
    """Shared plus gated routed linear experts over patch tokens.

    Parameters
    ----------
    patch_len : int
        Length p of every patch (the expert input width).
    cfg : MoEConfig
        Expert counts and hidden width.
    rng : numpy.random.Generator
        Initialization randomness.

    """

    def __init__(self, patch_len, cfg, rng):
        self.cfg = cfg
        if cfg.n_shared:
            self.shared = ExpertBank(cfg.n_shared, patch_len, cfg.d_model, rng)
        else:
            self.shared = None
        self.routed = ExpertBank(cfg.n_experts, patch_len, cfg.d_model, rng)
        self.gate_mu = Linear(patch_len, cfg.n_experts, rng)
        self.gate_sigma = Linear(patch_len, cfg.n_experts, rng)
        self.last_decision_ = None

    def expert_project(self, tokens, index):
        """Apply routed expert `index` to tokens of shape (tokens, p)."""
        return self.routed.project(tokens, index)

    def noisy_gate(self, tokens, training=False, rng=None):
        """Route tokens to their top-k experts.

        In training the logits are ``mu(x) + eps * sigma(x)`` with
        standard normal ``eps`` drawn from `rng`; at inference they are
        ``mu(x)``. The sigma output is used as is, without a softplus.

        Parameters
        ----------
        tokens : Tensor | ndarray, shape (tokens, p)
        training : bool
        rng : numpy.random.Generator | None
            Required when training with noisy gating.

        Returns
        -------
        decision : GateDecision

        """
        tokens = tn.as_tensor(tokens)
        logits = self.gate_mu(tokens)
        if training and self.cfg.noisy_gating:
            if rng is None:
                raise ValueError('noisy gating in training needs an rng')
            noise = rng.standard_normal(logits.shape)
            logits = logits + noise * self.gate_sigma(tokens)

        indices, keep = keep_top_k(logits.values, self.cfg.top_k)
        masked = tn.masked_fill(logits, ~keep, -np.inf)
        gates = tn.softmax(masked, axis=-1)
        weights = np.take_along_axis(gates.values, indices, axis=-1)
        return GateDecision(indices=indices, weights=weights,
                            logits=logits.values.copy(), gates=gates)

    def forward(self, patches, training=False, rng=None):
        """Embed patches: (..., n, p) -> (..., n, d).

        The output is the sum of all shared experts plus the gate-weighted
        sum of the routed experts selected for each token.

        """
        patches = tn.as_tensor(patches)
        lead = patches.shape[:-1]
        tokens = tn.reshape(patches, (-1, patches.shape[-1]))
        decision = self.noisy_gate(tokens, training=training, rng=rng)
        self.last_decision_ = decision

        # (M, tokens, d) weighted by (M, tokens, 1); unselected weights are 0
        routed = self.routed(tokens)
        weights = tn.reshape(tn.transpose(decision.gates),
                             (self.cfg.n_experts, -1, 1))
        out = tn.sum(routed * weights, axis=0)
        if self.shared is not None:
            out = out + tn.sum(self.shared(tokens), axis=0)
        return tn.reshape(out, lead + (self.cfg.d_model,))


class LinearPatchEmbedding(Module):
    """Single linear value embedding of patches (the no-MoE variant)."""

    def __init__(self, patch_len, d_model, rng):
        self.value = Linear(patch_len, d_model, rng)
        self.last_decision_ = None

    def forward(self, patches, training=False, rng=None):
        """Embed patches: (..., n, p) -> (..., n, d)."""
        return self.value(tn.as_tensor(patches))


class SeriesEmbedding(Module):
    """Channel embeddings, stochastic pooling and prototype construction.

    Parameters
    ----------
    lookback : int
        Window length T, the input width of the channel embedding.
    d_model : int
        Width d of channel embeddings and prototypes.
    d_pool : int
        Width d' of the pooled core representation.
    rng : numpy.random.Generator

    """

    def __init__(self, lookback, d_model, d_pool, rng):
        self.d_pool = d_pool
        self.channel = Linear(lookback, d_model, rng)
        self.pool_mlp = MLP(d_model, d_pool, d_pool, rng)
        self.prototype_mlp = MLP(d_model + d_pool, d_model, d_model, rng)

    def channel_embed(self, X):
        """Embed each channel's whole window: (..., N, T) -> (..., N, d)."""
        return self.channel(tn.as_tensor(X))

    def stochastic_pool(self, channel_embeddings, training=False, rng=None):
        """Pool the channel axis into a single core representation.

        The pool MLP gives activations of shape (..., N, d'). For every
        feature position the softmax over the N channels gives sampling
        probabilities. Training draws one channel per position; inference
        returns the probability-weighted expectation.

        Returns
        -------
        core : Tensor, shape (..., d')

        """
        activations = self.pool_mlp(channel_embeddings)
        probs = tn.softmax(activations, axis=-2)
        if not training:
            return tn.sum(probs * activations, axis=-2)

        if rng is None:
            raise ValueError('stochastic pooling in training needs an rng')
        n_channels = activations.shape[-2]
        cdf = np.cumsum(probs.values, axis=-2)
        draws = rng.random(activations.shape[:-2] + (1, activations.shape[-1]))
        picked = np.minimum((cdf <= draws).sum(axis=-2), n_channels - 1)
        onehot = np.arange(n_channels)[:, None] == picked[..., None, :]
        return tn.sum(activations * onehot.astype(np.float64), axis=-2)

    def build_prototypes(self, channel_embeddings, core):
        """Concatenate the core onto every channel and map back to width d.

        Returns
        -------
        prototypes : Tensor, shape (..., N, d)

        """
        shape = channel_embeddings.shape
        if core.shape[:-1] != shape[:-2]:
            raise ShapeError('core of shape {} does not match channel '
                             'embeddings of shape {}'
                             .format(core.shape, shape))
        lead = shape[:-2]
        spread = (tn.reshape(core, lead + (1, core.shape[-1])) +
                  np.zeros(lead + (shape[-2], core.shape[-1])))
        features = tn.concat([channel_embeddings, spread], axis=-1)
        return self.prototype_mlp(features)

    def forward(self, X, training=False, rng=None):
        """Build the :class:`PrototypeSet` for windows of shape (..., N, T)."""
        embeddings = self.channel_embed(X)
        core = self.stochastic_pool(embeddings, training=training, rng=rng)
        prototypes = self.build_prototypes(embeddings, core)
        return PrototypeSet(channel_embeddings=embeddings, core=core,
                            prototypes=prototypes)


class SimpleSeriesEmbedding(Module):
    """Prototypes from an MLP of each channel embedding, without pooling."""

    def __init__(self, lookback, d_model, rng):
        self.channel = Linear(lookback, d_model, rng)
        self.prototype_mlp = MLP(d_model, d_model, d_model, rng)

    def forward(self, X, training=False, rng=None):
        """Build a :class:`PrototypeSet` whose ``core`` is None."""
        embeddings = self.channel(tn.as_tensor(X))
        return PrototypeSet(channel_embeddings=embeddings, core=None,
                            prototypes=self.prototype_mlp(embeddings))
