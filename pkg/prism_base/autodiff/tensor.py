"""
Tensor and tape for reverse-mode differentiation

Primitives record a TapeNode on the innermost active Tape whenever one of
their inputs requires a gradient. Outside a ``with Tape()`` block nothing is
recorded, which is how evaluation runs.
"""
import threading

import numpy as np

from ..exceptions import DimensionError

# Each thread records onto its own tape stack
_LOCAL = threading.local()


def _active_tapes():
    if not hasattr(_LOCAL, 'tapes'):
        _LOCAL.tapes = []
    return _LOCAL.tapes


class Tensor(object):
    """ Dense row-major float64 buffer plus an optional gradient """
    __slots__ = ('values', 'grad', 'requires_grad', 'is_leaf', 'name')

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.array(values, dtype=np.float64) if not isinstance(values, np.ndarray) \
            else values.astype(np.float64, copy=False)
        self.grad = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    def item(self):
        return float(self.values.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def copy(self):
        """ Detached deep copy (keeps requires_grad and name) """
        return Tensor(self.values.copy(), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self):
        label = self.name or 'tensor'
        return '<Tensor %s shape=%s grad=%s>' % (label, self.shape, self.requires_grad)

    # Operator sugar; the primitives live in ops
    def __add__(self, other):
        from .ops import add
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub
        return sub(self, other)

    def __rsub__(self, other):
        from .ops import sub
        return sub(other, self)

    def __mul__(self, other):
        from .ops import mul
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale
        return scale(self, -1.0)


def as_tensor(value):
    """ Wraps constants; tensors pass through untouched """
    return value if isinstance(value, Tensor) else Tensor(value)


class TapeNode(object):
    """ One executed primitive """
    __slots__ = ('op', 'inputs', 'output', 'backward')

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape(object):
    """ Ordered record of primitives; inputs always precede their consumers """

    def __init__(self):
        self.nodes = []

    def __enter__(self):
        _active_tapes().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _active_tapes().remove(self)
        return False

    def backward(self, loss):
        """ Accumulates d(loss)/d(leaf) into every leaf's ``grad`` """
        if loss.size != 1:
            raise DimensionError('backward needs a scalar loss, got shape %(shape)s',
                                 code='non_scalar_loss', params={'shape': loss.shape})
        if not loss.requires_grad:
            return
        pending = {id(loss): np.ones_like(loss.values)}
        if loss.is_leaf:
            _accumulate_leaf(loss, pending[id(loss)])
            return

        for node in reversed(self.nodes):
            upstream = pending.pop(id(node.output), None)
            if upstream is None:
                continue
            for tensor, grad in zip(node.inputs, node.backward(upstream)):
                if grad is None or not tensor.requires_grad:
                    continue
                if tensor.is_leaf:
                    _accumulate_leaf(tensor, grad)
                else:
                    key = id(tensor)
                    pending[key] = grad if key not in pending else pending[key] + grad


def _accumulate_leaf(tensor, grad):
    grad = np.asarray(grad, dtype=np.float64).reshape(tensor.shape)
    tensor.grad = grad.copy() if tensor.grad is None else tensor.grad + grad


def record(op, values, inputs, backward):
    """ Wraps a primitive's output and registers it on the active tape """
    out = Tensor(values)
    tapes = _active_tapes()
    if tapes and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tapes[-1].nodes.append(TapeNode(op, tuple(inputs), out, backward))
    return out


def zero_grads(tensors):
    for tensor in tensors:
        tensor.grad = None
