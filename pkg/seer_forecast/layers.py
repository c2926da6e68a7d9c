"""Parameter containers and the small layers the model is built from.

A :class:`Module` finds its parameters by walking its attributes, so the
name of a parameter is the attribute path to it, e.g.
``'embedding.routed.weight'``. Those names are used as checkpoint keys.

"""
from collections import OrderedDict

import numpy as np
import pandas as pd

from seer_forecast import tensor as tn
from seer_forecast.define_settings import EPS_LAYERNORM
from seer_forecast.errors import CheckpointError, ShapeError


def Parameter(values):
    """Return a trainable tensor holding a copy of `values`."""
    return tn.Tensor(np.array(values, dtype=np.float64), requires_grad=True)


class Module():
    """Base class: parameter discovery, state dicts and a call shortcut."""

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def named_parameters(self, prefix=''):
        """Yield ``(name, tensor)`` for all parameters, in definition order."""
        for name, value in self.__dict__.items():
            if name.startswith('_'):
                continue
            if isinstance(value, tn.Tensor) and value.requires_grad:
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix + name + '.')

    def parameters(self):
        """Return all parameters as a list."""
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        """Drop the gradients of all parameters."""
        for p in self.parameters():
            p.zero_grad()

    def state_dict(self):
        """Return an OrderedDict of parameter name -> copy of its values."""
        return OrderedDict((name, p.values.copy())
                           for name, p in self.named_parameters())

    def load_state_dict(self, state):
        """Copy values from `state` into the parameters.

        Parameters
        ----------
        state : dict
            Mapping of parameter name to array. Must hold exactly the
            parameters of this module.

        """
        own = OrderedDict(self.named_parameters())
        missing = [name for name in own if name not in state]
        unexpected = [name for name in state if name not in own]
        if missing or unexpected:
            raise CheckpointError('parameter mismatch: missing {}, '
                                  'unexpected {}'.format(missing, unexpected))
        for name, p in own.items():
            values = np.asarray(state[name], dtype=np.float64)
            if values.shape != p.shape:
                raise ShapeError('parameter {} has shape {}, got {}'
                                 .format(name, p.shape, values.shape))
            p.values = values.copy()

    def describe(self):
        """Tabulate the parameters.

        Returns
        -------
        table : pandas.DataFrame
            Columns name, shape and count, one row per parameter.

        """
        rows = [(name, 'x'.join(str(s) for s in p.shape), p.size)
                for name, p in self.named_parameters()]
        return pd.DataFrame(rows, columns=['name', 'shape', 'count'])

    def n_parameters(self):
        """Total number of trainable values."""
        return int(np.sum([p.size for p in self.parameters()]))


def _uniform(rng, fan_in, shape):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Affine map ``x @ weight + bias`` over the last axis.

    Parameters
    ----------
    n_in, n_out : int
        Input and output widths.
    rng : numpy.random.Generator
        Source of the uniform(-1/sqrt(n_in), 1/sqrt(n_in)) initialization.

    """

    def __init__(self, n_in, n_out, rng):
        self.weight = Parameter(_uniform(rng, n_in, (n_in, n_out)))
        self.bias = Parameter(_uniform(rng, n_in, (n_out,)))

    def forward(self, x):
        """Apply the map to the last axis of `x`."""
        return tn.matmul(x, self.weight) + self.bias


class ExpertBank(Module):
    """A stack of independent linear experts sharing one weight array.

    ``weight`` has shape (n_experts, n_in, n_out) and ``bias`` has shape
    (n_experts, 1, n_out).

    """

    def __init__(self, n_experts, n_in, n_out, rng):
        self.n_experts = n_experts
        self.weight = Parameter(_uniform(rng, n_in, (n_experts, n_in, n_out)))
        self.bias = Parameter(_uniform(rng, n_in, (n_experts, 1, n_out)))

    def project(self, x, index):
        """Apply expert `index` to tokens `x` of shape (tokens, n_in)."""
        if not 0 <= index < self.n_experts:
            raise IndexError('expert {} does not exist, there are {}'
                             .format(index, self.n_experts))
        return tn.matmul(x, self.weight[index]) + self.bias[index]

    def forward(self, x):
        """Apply every expert: (tokens, n_in) -> (n_experts, tokens, n_out)."""
        return tn.matmul(x, self.weight) + self.bias


class MLP(Module):
    """Two linear layers with a GELU in between."""

    def __init__(self, n_in, n_hidden, n_out, rng):
        self.fc1 = Linear(n_in, n_hidden, rng)
        self.fc2 = Linear(n_hidden, n_out, rng)

    def forward(self, x):
        """Map the last axis of `x` from n_in to n_out."""
        return self.fc2(tn.gelu(self.fc1(x)))


class LayerNorm(Module):
    """Normalize the last axis to zero mean and unit variance, then scale."""

    def __init__(self, dim, eps=EPS_LAYERNORM):
        self.eps = eps
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))

    def forward(self, x):
        """Normalize `x` over its last axis."""
        centered = x - tn.mean(x, axis=-1, keepdims=True)
        var = tn.mean(centered * centered, axis=-1, keepdims=True)
        return centered / tn.sqrt(var + self.eps) * self.gamma + self.beta
