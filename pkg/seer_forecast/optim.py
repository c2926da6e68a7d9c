"""Adam optimizer for :class:`seer_forecast.tensor.Tensor` parameters."""
import logging
from dataclasses import dataclass

import numpy as np

from seer_forecast.define_settings import LR, ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from seer_forecast.errors import NonFiniteError, ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Moment accumulators and hyper-parameters of an Adam optimizer.

    Attributes
    ----------
    first_moment, second_moment : list of ndarray
        One accumulator per parameter, same shape as that parameter.
    step : int
        Number of updates done so far.
    lr, beta1, beta2, eps : float
        Learning rate, moment decay rates and stability constant.

    """

    first_moment: list
    second_moment: list
    step: int = 0
    lr: float = LR
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS

    @classmethod
    def zeros_like(cls, params, **hyper):
        """Create a state with zeroed accumulators for `params`."""
        first = [np.zeros(p.shape) for p in params]
        second = [np.zeros(p.shape) for p in params]
        return cls(first_moment=first, second_moment=second, **hyper)


def adam_step(params, grads, state):
    """Apply one bias-corrected Adam update in place.

    Parameters
    ----------
    params : list of Tensor
        Parameters, updated in place.
    grads : list of ndarray | None
        Gradients aligned with `params`. None counts as zero.
    state : AdamState
        Accumulators, updated in place; ``state.step`` is incremented.

    Raises
    ------
    NonFiniteError
        If any gradient holds NaN or inf. Nothing is updated then.

    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError('got {} params, {} grads and {} accumulators'
                         .format(len(params), len(grads),
                                 len(state.first_moment)))
    grads = [np.zeros(p.shape) if g is None else np.asarray(g)
             for p, g in zip(params, grads)]
    for idx, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.shape:
            raise ShapeError('gradient {} has shape {}, parameter has {}'
                             .format(idx, g.shape, p.shape))
        if not np.all(np.isfinite(g)):
            raise NonFiniteError('non-finite gradient for parameter {} '
                                 '(shape {}) at step {}; update aborted'
                                 .format(idx, p.shape, state.step + 1))

    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.first_moment,
                          state.second_moment):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


class Adam():
    """Keep a parameter list and its :class:`AdamState` together."""

    def __init__(self, params, lr=LR, beta1=ADAM_BETA1, beta2=ADAM_BETA2,
                 eps=ADAM_EPS):
        self.params = list(params)
        self.state = AdamState.zeros_like(self.params, lr=lr, beta1=beta1,
                                          beta2=beta2, eps=eps)

    def step(self):
        """Update all parameters from their current ``grad``."""
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self):
        """Drop the gradients of all parameters."""
        for p in self.params:
            p.zero_grad()
