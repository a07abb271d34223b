"""
Adam optimizer over named parameter tensors
"""
from dataclasses import dataclass, field

import numpy as np

from ..app_settings import ADAM_BETA1, ADAM_BETA2, ADAM_EPS
from ..exceptions import DimensionError, NonFiniteError


@dataclass
class AdamState:
    """ Moment buffers keyed by parameter name """
    lr: float
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """
    Bias-corrected Adam update, applied in place to ``params``

        - params: mapping name -> Tensor
        - grads: mapping name -> ndarray (missing names count as zero)
    Every gradient is checked before any parameter moves.
    """
    for name, grad in grads.items():
        if grad is None:
            continue
        if grad.shape != params[name].shape:
            raise DimensionError('gradient for %(block)s has shape %(got)s, parameter has %(want)s',
                                 code='adam_shape',
                                 params={'block': name, 'got': grad.shape, 'want': params[name].shape})
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError('non-finite gradient in parameter block %(block)s',
                                 code='non_finite_gradient', params={'block': name})

    state.step_count += 1
    correction1 = 1.0 - state.beta1 ** state.step_count
    correction2 = 1.0 - state.beta2 ** state.step_count

    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.values)
        m = state.first_moment.setdefault(name, np.zeros_like(param.values))
        v = state.second_moment.setdefault(name, np.zeros_like(param.values))
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * (grad * grad)
        param.values -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return state
