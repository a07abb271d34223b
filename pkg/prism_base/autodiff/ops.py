"""
Differentiable primitives

Every function takes Tensors (constants are wrapped), computes the forward
value with NumPy and registers a backward closure returning one gradient per
input. All of them are covered by the gradient-check property tests.
"""
import numpy as np
from scipy.special import expit

from ..app_settings import LAYER_NORM_EPS, MASK_FILL
from ..exceptions import DimensionError, EmptyEvidenceError
from .tensor import Tensor, as_tensor, record

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_A = 0.044715


def _unbroadcast(grad, shape):
    """ Sums a broadcast gradient back down to ``shape`` """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


""" -----------------------------------------------------------------------
                               ELEMENTWISE
    ------------------------------------------------------------------- """


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return record('add', a.values + b.values, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)
    return record('sub', a.values - b.values, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        return _unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)
    return record('mul', a.values * b.values, (a, b), backward)


def scale(x, factor):
    """ Multiplication by a Python constant """
    x = as_tensor(x)
    factor = float(factor)
    return record('scale', x.values * factor, (x,), lambda g: (g * factor,))


def divide(x, divisor):
    """ Division by a Python constant (x / divisor, not x * (1 / divisor)) """
    x = as_tensor(x)
    divisor = float(divisor)
    return record('divide', x.values / divisor, (x,), lambda g: (g / divisor,))


def gelu(x):
    """ Tanh-approximated GELU, the nonlinearity of every FFN """
    x = as_tensor(x)
    inner = _GELU_C * (x.values + _GELU_A * x.values ** 3)
    t = np.tanh(inner)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3.0 * _GELU_A * x.values ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.values * (1.0 - t * t) * d_inner),)
    return record('gelu', 0.5 * x.values * (1.0 + t), (x,), backward)


def sigmoid(x):
    x = as_tensor(x)
    y = expit(x.values)
    return record('sigmoid', y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x):
    x = as_tensor(x)
    return record('log', np.log(x.values), (x,), lambda g: (g / x.values,))


def cos(x):
    x = as_tensor(x)
    return record('cos', np.cos(x.values), (x,), lambda g: (-g * np.sin(x.values),))


def relu(x):
    """ max(0, x); the subgradient at 0 is 0 """
    x = as_tensor(x)
    active = x.values > 0.0
    return record('relu', np.where(active, x.values, 0.0), (x,), lambda g: (g * active,))


def clip(x, low, high):
    x = as_tensor(x)
    inside = (x.values >= low) & (x.values <= high)
    return record('clip', np.clip(x.values, low, high), (x,), lambda g: (g * inside,))


def stop_gradient(x):
    """ Same values, no path back to ``x`` """
    x = as_tensor(x)
    return Tensor(x.values, requires_grad=False)


""" -----------------------------------------------------------------------
                                 SHAPES
    ------------------------------------------------------------------- """


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    values = np.concatenate([t.values for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))
    return record('concat', values, tensors, backward)


def slice_axis(x, axis, start, stop):
    x = as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)

    def backward(g):
        full = np.zeros_like(x.values)
        full[index] = g
        return (full,)
    return record('slice', x.values[index], (x,), backward)


def reshape(x, shape):
    x = as_tensor(x)
    return record('reshape', x.values.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    x = as_tensor(x)
    inverse = np.argsort(axes)
    return record('transpose', np.transpose(x.values, axes), (x,),
                  lambda g: (np.transpose(g, inverse),))


def take_rows(x, rows):
    """ Gathers rows along axis 0 (duplicates allowed) """
    x = as_tensor(x)
    rows = np.asarray(rows, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(x.values)
        np.add.at(full, rows, g)
        return (full,)
    return record('take_rows', x.values[rows], (x,), backward)


""" -----------------------------------------------------------------------
                               REDUCTIONS
    ------------------------------------------------------------------- """


def reduce_sum(x, axis=None, keepdims=False):
    x = as_tensor(x)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)
    return record('sum', np.sum(x.values, axis=axis, keepdims=keepdims), (x,), backward)


def reduce_mean(x, axis=None):
    x = as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    return scale(reduce_sum(x, axis=axis), 1.0 / count)


def sq_norm(x):
    """ Squared L2 norm over the last axis """
    x = as_tensor(x)
    return record('sq_norm', np.sum(x.values * x.values, axis=-1), (x,),
                  lambda g: (2.0 * x.values * g[..., None],))


def masked_mean(x, mask, axis=1):
    """
    Mean over ``axis`` counting only positions where mask is 1
        - mask has the shape of x's leading axes up to and including ``axis``
        - all-masked slices pool to exactly zero
    """
    x = as_tensor(x)
    mask = np.asarray(mask, dtype=np.float64)
    expanded = mask.reshape(mask.shape + (1,) * (x.ndim - mask.ndim))
    count = np.maximum(expanded.sum(axis=axis, keepdims=True), 1.0)
    weights = expanded / count

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)
    return record('masked_mean', np.sum(x.values * weights, axis=axis), (x,), backward)


""" -----------------------------------------------------------------------
                              LINEAR ALGEBRA
    ------------------------------------------------------------------- """


def matmul(a, b):
    """
    a @ b for either
        * identical leading (batch) axes on both sides, or
        * a batched ``a`` against a 2-D ``b`` shared by every batch entry
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise DimensionError('matmul contraction axis mismatch: %(a)s @ %(b)s',
                             code='matmul_axis', params={'a': a.shape, 'b': b.shape})
    shared = b.ndim == 2 and a.ndim > 2
    if not shared and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError('matmul batch axes differ: %(a)s @ %(b)s',
                             code='matmul_batch', params={'a': a.shape, 'b': b.shape})

    def backward(g):
        grad_a = np.matmul(g, np.swapaxes(b.values, -1, -2))
        if shared:
            grad_b = a.values.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            grad_b = np.matmul(np.swapaxes(a.values, -1, -2), g)
        return grad_a, grad_b
    return record('matmul', np.matmul(a.values, b.values), (a, b), backward)


def linear(x, W, bias):
    """ x W + bias over the last axis of x """
    x, W, bias = as_tensor(x), as_tensor(W), as_tensor(bias)
    if W.ndim != 2:
        raise DimensionError('linear weight must be 2-D, got %(shape)s',
                             code='linear_weight', params={'shape': W.shape})
    if x.shape[-1] != W.shape[0]:
        raise DimensionError('linear input axis -1 has size %(got)s, weight axis 0 expects %(want)s',
                             code='linear_in', params={'got': x.shape[-1], 'want': W.shape[0]})
    if bias.shape != (W.shape[1],):
        raise DimensionError('linear bias axis 0 has size %(got)s, weight axis 1 expects %(want)s',
                             code='linear_bias', params={'got': bias.shape, 'want': W.shape[1]})
    flat = x.values.reshape(-1, W.shape[0])

    def backward(g):
        g2 = g.reshape(-1, W.shape[1])
        return (g @ W.values.T, flat.T @ g2, g2.sum(axis=0))
    return record('linear', x.values @ W.values + bias.values, (x, W, bias), backward)


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    """ Normalizes the last axis, then applies the learned affine map """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    width = x.shape[-1]
    centered = x.values - x.values.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    normed = centered * inv_std

    def backward(g):
        g_normed = g * gamma.values
        grad_x = inv_std / width * (width * g_normed
                                    - g_normed.sum(axis=-1, keepdims=True)
                                    - normed * (g_normed * normed).sum(axis=-1, keepdims=True))
        lead = tuple(range(x.ndim - 1))
        return grad_x, (g * normed).sum(axis=lead), g.sum(axis=lead)
    return record('layer_norm', normed * gamma.values + beta.values, (x, gamma, beta), backward)


def masked_softmax(scores, mask, allow_empty=False):
    """
    Softmax over the last axis with masked positions weighted exactly zero
        - mask broadcasts against scores
        - rows without a valid position are an error unless allow_empty,
          in which case they get all-zero weights
    """
    scores = as_tensor(scores)
    valid = np.broadcast_to(np.asarray(mask, dtype=np.float64) > 0.0, scores.shape)
    has_valid = valid.any(axis=-1, keepdims=True)
    if not allow_empty and not has_valid.all():
        raise EmptyEvidenceError('empty evidence: %(rows)s row(s) have no valid position',
                                 code='empty_evidence', params={'rows': int((~has_valid).sum())})
    filled = np.where(valid, scores.values, MASK_FILL)
    shifted = np.exp(filled - filled.max(axis=-1, keepdims=True)) * valid
    total = shifted.sum(axis=-1, keepdims=True)
    weights = shifted / np.where(total > 0.0, total, 1.0)

    def backward(g):
        return (weights * (g - (g * weights).sum(axis=-1, keepdims=True)),)
    return record('masked_softmax', weights, (scores,), backward)
