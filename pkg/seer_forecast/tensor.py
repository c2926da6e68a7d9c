"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation stores its inputs on the output tensor together with the
name of its gradient rule. Rules are kept by name in ``GRADIENT_RULES`` and
looked up when :func:`backward` walks the tape, so the verification harness
can check (or deliberately break) each rule on its own.

Only trailing-dimension broadcasting is supported, as in numpy. The graph is
rebuilt on every forward pass.

"""
import logging
from collections import OrderedDict
from contextlib import contextmanager

import numpy as np
from scipy import special

from seer_forecast.errors import (ShapeError, DegenerateDistributionError,
                                  NonFiniteError)

logger = logging.getLogger(__name__)

# op name -> callable(grad, out, *inputs, **attrs) returning input grads
GRADIENT_RULES = OrderedDict()

_RECORDING = [True]


def register_gradient(op):
    """Register the gradient rule for the operation called `op`."""
    def decorator(func):
        GRADIENT_RULES[op] = func
        return func
    return decorator


class Tensor:
    """A dense array of doubles that may take part in differentiation.

    Parameters
    ----------
    values : array_like
        The data. Always stored as float64.
    requires_grad : bool
        If True, operations on this tensor are recorded and :func:`backward`
        writes a gradient of identical shape into ``grad``.

    """

    # make ``ndarray <op> Tensor`` defer to the Tensor's reflected operators
    __array_priority__ = 100

    def __init__(self, values, requires_grad=False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._op = None
        self._inputs = ()
        self._attrs = {}

    @property
    def shape(self):
        """Shape of the tensor as a tuple."""
        return self.values.shape

    @property
    def ndim(self):
        """Number of dimensions."""
        return self.values.ndim

    @property
    def size(self):
        """Number of stored values."""
        return self.values.size

    def __repr__(self):
        return 'Tensor(shape={}, requires_grad={}, op={})'.format(
            self.shape, self.requires_grad, self._op)

    def numpy(self):
        """Return a copy of the values as an ndarray."""
        return self.values.copy()

    def item(self):
        """Return the single value of a size-1 tensor as a float."""
        if self.size != 1:
            raise ShapeError('item() needs a single value, got shape {}'
                             .format(self.shape))
        return float(self.values.reshape(-1)[0])

    def is_finite(self):
        """Return True if all values are finite."""
        return bool(np.all(np.isfinite(self.values)))

    def zero_grad(self):
        """Drop the accumulated gradient."""
        self.grad = None

    def backward(self):
        """Run :func:`backward` with this tensor as the loss."""
        backward(self)

    # arithmetic ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    # shape helpers ---------------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        """Sum over `axis`, see :func:`sum`."""
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        """Mean over `axis`, see :func:`mean`."""
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        """Reshape, see :func:`reshape`."""
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, tuple(shape))

    def transpose(self, *axes):
        """Permute axes, see :func:`transpose`."""
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return transpose(self, tuple(axes) if axes else None)

    def detach(self):
        """Copy of the values cut from the graph, see :func:`detach`."""
        return detach(self)


def as_tensor(x):
    """Wrap `x` in a constant Tensor unless it already is one."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


@contextmanager
def no_grad():
    """Do not record operations inside the block.

    Used for inference, where the tape would only cost memory.

    """
    previous = _RECORDING[0]
    _RECORDING[0] = False
    try:
        yield
    finally:
        _RECORDING[0] = previous


def _make(op, values, inputs, **attrs):
    """Create the output of `op` and record it on the tape if needed."""
    out = Tensor(values)
    if _RECORDING[0] and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = op
        out._inputs = tuple(inputs)
        out._attrs = attrs
    return out


def _broadcast_shape(a_shape, b_shape):
    try:
        return np.broadcast_shapes(a_shape, b_shape)
    except ValueError:
        raise ShapeError('cannot broadcast shapes {} and {}'
                         .format(a_shape, b_shape))


def unbroadcast(grad, shape):
    """Sum `grad` over the axes that broadcasting added to reach `shape`."""
    grad = np.asarray(grad, dtype=np.float64)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def check_finite(tensor, what='tensor'):
    """Raise NonFiniteError if `tensor` holds NaN or inf values.

    Parameters
    ----------
    tensor : Tensor | ndarray
        The values to check.
    what : str
        Name used in the error message.

    Returns
    -------
    tensor : Tensor | ndarray
        The input, unchanged, so calls can be chained.

    """
    if isinstance(tensor, Tensor):
        values = tensor.values
    else:
        values = np.asarray(tensor)
    bad = ~np.isfinite(values)
    if np.any(bad):
        raise NonFiniteError('{} holds {} non-finite value(s) out of {}'
                             .format(what, int(bad.sum()), values.size))
    return tensor


# elementwise binary ----------------------------------------------------------
def add(a, b):
    """Elementwise sum with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make('add', a.values + b.values, (a, b))


@register_gradient('add')
def _add_grad(g, out, a, b):
    return g, g


def sub(a, b):
    """Elementwise difference with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make('sub', a.values - b.values, (a, b))


@register_gradient('sub')
def _sub_grad(g, out, a, b):
    return g, -g


def mul(a, b):
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    return _make('mul', a.values * b.values, (a, b))


@register_gradient('mul')
def _mul_grad(g, out, a, b):
    return g * b.values, g * a.values


def div(a, b):
    """Elementwise quotient with broadcasting.

    Division by zero follows IEEE semantics; use :func:`check_finite` to
    surface the resulting inf or NaN values.

    """
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    with np.errstate(divide='ignore', invalid='ignore'):
        values = a.values / b.values
    return _make('div', values, (a, b))


@register_gradient('div')
def _div_grad(g, out, a, b):
    with np.errstate(divide='ignore', invalid='ignore'):
        return g / b.values, -g * a.values / (b.values * b.values)


# elementwise unary -----------------------------------------------------------
def neg(a):
    """Elementwise negation."""
    a = as_tensor(a)
    return _make('neg', -a.values, (a,))


@register_gradient('neg')
def _neg_grad(g, out, a):
    return (-g,)


def exp(a):
    """Elementwise exponential."""
    a = as_tensor(a)
    return _make('exp', np.exp(a.values), (a,))


@register_gradient('exp')
def _exp_grad(g, out, a):
    return (g * out.values,)


def sigmoid(a):
    """Elementwise logistic function."""
    a = as_tensor(a)
    return _make('sigmoid', special.expit(a.values), (a,))


@register_gradient('sigmoid')
def _sigmoid_grad(g, out, a):
    s = out.values
    return (g * s * (1.0 - s),)


def relu(a):
    """Elementwise rectifier."""
    a = as_tensor(a)
    return _make('relu', np.maximum(a.values, 0.0), (a,))


@register_gradient('relu')
def _relu_grad(g, out, a):
    return (g * (a.values > 0),)


def gelu(a):
    """Elementwise Gaussian error linear unit (exact erf form)."""
    a = as_tensor(a)
    cdf = 0.5 * (1.0 + special.erf(a.values / np.sqrt(2.0)))
    return _make('gelu', a.values * cdf, (a,))


@register_gradient('gelu')
def _gelu_grad(g, out, a):
    x = a.values
    cdf = 0.5 * (1.0 + special.erf(x / np.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    return (g * (cdf + x * pdf),)


def sqrt(a):
    """Elementwise square root."""
    a = as_tensor(a)
    return _make('sqrt', np.sqrt(a.values), (a,))


@register_gradient('sqrt')
def _sqrt_grad(g, out, a):
    return (g * 0.5 / out.values,)


def absolute(a):
    """Elementwise absolute value, with subgradient 0 at 0."""
    a = as_tensor(a)
    return _make('abs', np.abs(a.values), (a,))


@register_gradient('abs')
def _abs_grad(g, out, a):
    return (g * np.sign(a.values),)


def clip(a, low, high):
    """Clamp values into ``[low, high]``; no gradient outside the range."""
    a = as_tensor(a)
    return _make('clip', np.clip(a.values, low, high), (a,),
                 low=low, high=high)


@register_gradient('clip')
def _clip_grad(g, out, a, low, high):
    inside = (a.values >= low) & (a.values <= high)
    return (g * inside,)


_BINARY = {'add': add, 'sub': sub, 'mul': mul, 'div': div}
_UNARY = {'neg': neg, 'exp': exp, 'sigmoid': sigmoid, 'relu': relu,
          'gelu': gelu, 'sqrt': sqrt, 'abs': absolute}


def elementwise(op_kind, a, b=None):
    """Apply the elementwise operation named `op_kind`.

    Parameters
    ----------
    op_kind : str
        One of add, sub, mul, div (binary) or neg, exp, sigmoid, relu,
        gelu, sqrt, abs (unary).
    a : Tensor | array_like
        First operand.
    b : Tensor | array_like | float | None
        Second operand for binary operations.

    Returns
    -------
    out : Tensor

    """
    if op_kind in _BINARY:
        if b is None:
            raise ValueError('{} needs two operands'.format(op_kind))
        return _BINARY[op_kind](a, b)
    if op_kind in _UNARY:
        return _UNARY[op_kind](a)
    raise ValueError('unknown elementwise op "{}"'.format(op_kind))


# contraction -----------------------------------------------------------------
def matmul(a, b):
    """Batched matrix product over the last two axes.

    Leading (batch) axes must be equal or of size one.

    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError('matmul needs at least 2-D operands, got {} and {}'
                         .format(a.shape, b.shape))
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError('matmul inner dimensions differ: {} and {}'
                         .format(a.shape, b.shape))
    _broadcast_shape(a.shape[:-2], b.shape[:-2])
    return _make('matmul', np.matmul(a.values, b.values), (a, b))


@register_gradient('matmul')
def _matmul_grad(g, out, a, b):
    grad_a = np.matmul(g, np.swapaxes(b.values, -1, -2))
    grad_b = np.matmul(np.swapaxes(a.values, -1, -2), g)
    return grad_a, grad_b


# softmax ---------------------------------------------------------------------
def softmax(x, axis=-1):
    """Softmax along `axis`, computed after subtracting the maximum.

    Entries equal to -inf get a probability of exactly 0.

    Raises
    ------
    DegenerateDistributionError
        If any slice along `axis` is entirely -inf.

    """
    x = as_tensor(x)
    axis = _normalize_axis(x, axis)
    top = np.max(x.values, axis=axis, keepdims=True)
    if np.any(np.isneginf(top)):
        raise DegenerateDistributionError(
            'softmax over an all -inf slice along axis {} of shape {}'
            .format(axis, x.shape))
    with np.errstate(invalid='ignore'):
        e = np.exp(x.values - top)
    return _make('softmax', e / e.sum(axis=axis, keepdims=True), (x,),
                 axis=axis)


@register_gradient('softmax')
def _softmax_grad(g, out, x, axis):
    y = out.values
    return (y * (g - np.sum(g * y, axis=axis, keepdims=True)),)


# reductions and shape manipulation ------------------------------------------
def _normalize_axis(x, axis):
    if axis is None:
        if x.size == 0:
            raise ShapeError('cannot reduce an empty tensor')
        return None
    if not isinstance(axis, (int, np.integer)) or not -x.ndim <= axis < x.ndim:
        raise ShapeError('axis {} is invalid for shape {}'
                         .format(axis, x.shape))
    axis = int(axis) % x.ndim
    if x.shape[axis] == 0:
        raise ShapeError('cannot reduce over empty axis {} of shape {}'
                         .format(axis, x.shape))
    return axis


def _expand_reduced(g, x, axis, keepdims):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, x.shape)


def sum(x, axis=None, keepdims=False):
    """Sum over `axis` (all axes if None)."""
    x = as_tensor(x)
    axis = _normalize_axis(x, axis)
    return _make('sum', np.sum(x.values, axis=axis, keepdims=keepdims), (x,),
                 axis=axis, keepdims=keepdims)


@register_gradient('sum')
def _sum_grad(g, out, x, axis, keepdims):
    return (_expand_reduced(g, x, axis, keepdims),)


def mean(x, axis=None, keepdims=False):
    """Arithmetic mean over `axis` (all axes if None)."""
    x = as_tensor(x)
    axis = _normalize_axis(x, axis)
    return _make('mean', np.mean(x.values, axis=axis, keepdims=keepdims),
                 (x,), axis=axis, keepdims=keepdims)


@register_gradient('mean')
def _mean_grad(g, out, x, axis, keepdims):
    count = x.size if axis is None else x.shape[axis]
    return (_expand_reduced(g, x, axis, keepdims) / count,)


def variance(x, axis=None, keepdims=False):
    """Biased (1/n) variance over `axis`."""
    x = as_tensor(x)
    axis = _normalize_axis(x, axis)
    return _make('variance', np.var(x.values, axis=axis, keepdims=keepdims),
                 (x,), axis=axis, keepdims=keepdims)


@register_gradient('variance')
def _variance_grad(g, out, x, axis, keepdims):
    count = x.size if axis is None else x.shape[axis]
    centered = x.values - np.mean(x.values, axis=axis, keepdims=True)
    return (_expand_reduced(g, x, axis, keepdims) * 2.0 * centered / count,)


def maximum(x, axis=None, keepdims=False):
    """Maximum over `axis`; the gradient goes to the first maximal entry."""
    x = as_tensor(x)
    axis = _normalize_axis(x, axis)
    return _make('max', np.max(x.values, axis=axis, keepdims=keepdims), (x,),
                 axis=axis, keepdims=keepdims)


@register_gradient('max')
def _max_grad(g, out, x, axis, keepdims):
    if axis is None:
        onehot = np.zeros(x.size)
        onehot[np.argmax(x.values)] = 1.0
        onehot = onehot.reshape(x.shape)
    else:
        idx = np.expand_dims(np.argmax(x.values, axis=axis), axis)
        onehot = np.zeros(x.shape)
        np.put_along_axis(onehot, idx, 1.0, axis=axis)
    return (_expand_reduced(g, x, axis, keepdims) * onehot,)


def reshape(x, shape):
    """Reshape without changing the values."""
    x = as_tensor(x)
    try:
        values = x.values.reshape(shape)
    except ValueError:
        raise ShapeError('cannot reshape {} into {}'.format(x.shape, shape))
    return _make('reshape', values, (x,))


@register_gradient('reshape')
def _reshape_grad(g, out, x):
    return (g.reshape(x.shape),)


def flatten(x, start_axis=0):
    """Merge all axes from `start_axis` on into one."""
    x = as_tensor(x)
    start_axis = start_axis % max(x.ndim, 1)
    return reshape(x, x.shape[:start_axis] + (-1,))


def transpose(x, axes=None):
    """Permute axes (reverse them if `axes` is None)."""
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    return _make('transpose', np.transpose(x.values, axes), (x,),
                 axes=tuple(axes))


@register_gradient('transpose')
def _transpose_grad(g, out, x, axes):
    return (np.transpose(g, np.argsort(axes)),)


def swapaxes(x, axis1, axis2):
    """Exchange two axes."""
    x = as_tensor(x)
    axes = list(range(x.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(x, tuple(axes))


def concat(tensors, axis=0):
    """Join tensors along an existing axis."""
    tensors = [as_tensor(t) for t in tensors]
    if len(tensors) == 0:
        raise ShapeError('concat needs at least one tensor')
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if (t.ndim != ref.ndim or
                t.shape[:axis] + t.shape[axis + 1:] !=
                ref.shape[:axis] + ref.shape[axis + 1:]):
            raise ShapeError('cannot concat shapes {} and {} along axis {}'
                             .format(ref.shape, t.shape, axis))
    values = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    return _make('concat', values, tensors, axis=axis, sizes=tuple(sizes))


@register_gradient('concat')
def _concat_grad(g, out, *tensors, axis, sizes):
    return np.split(g, np.cumsum(sizes)[:-1], axis=axis)


def getitem(x, index):
    """Index or slice a tensor (numpy indexing rules)."""
    x = as_tensor(x)
    return _make('getitem', x.values[index], (x,), index=index)


@register_gradient('getitem')
def _getitem_grad(g, out, x, index):
    full = np.zeros(x.shape)
    np.add.at(full, index, g)
    return (full,)


def masked_fill(x, mask, value):
    """Replace entries where the constant boolean `mask` is True by `value`."""
    x = as_tensor(x)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    return _make('masked_fill', np.where(mask, value, x.values), (x,),
                 mask=mask)


@register_gradient('masked_fill')
def _masked_fill_grad(g, out, x, mask):
    return (np.where(mask, 0.0, g),)


def detach(x):
    """Copy the values of `x` into a new constant tensor.

    The result has no gradient path back to `x`.

    """
    x = as_tensor(x)
    return Tensor(x.values.copy())


_REDUCE = {'sum': sum, 'mean': mean, 'variance': variance, 'max': maximum}


def reduce(op_kind, x, axis=None, **kwargs):
    """Apply the reduction or shape operation named `op_kind`.

    Parameters
    ----------
    op_kind : str
        One of sum, mean, variance, max, flatten, concat, slice, transpose,
        detach.
    x : Tensor | list of Tensor
        The operand (a list of tensors for concat).
    axis : int | tuple | slice | None
        Reduction axis; the start axis for flatten, the permutation for
        transpose and the index for slice.

    Returns
    -------
    out : Tensor

    """
    if op_kind in _REDUCE:
        return _REDUCE[op_kind](x, axis=axis, **kwargs)
    if op_kind == 'flatten':
        return flatten(x, 0 if axis is None else axis)
    if op_kind == 'concat':
        return concat(x, 0 if axis is None else axis)
    if op_kind == 'slice':
        return getitem(x, axis)
    if op_kind == 'transpose':
        return transpose(x, axis)
    if op_kind == 'detach':
        return detach(x)
    raise ValueError('unknown reduce op "{}"'.format(op_kind))


# reverse mode ----------------------------------------------------------------
def _topological_order(root):
    """Return the recorded graph above `root`, inputs before outputs."""
    order = list()
    visited = set()
    stack = [(root, False)]
    while stack:
        node, finished = stack.pop()
        if finished:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for inp in node._inputs:
            if inp.requires_grad and id(inp) not in visited:
                stack.append((inp, False))
    return order


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor.

    Parameters
    ----------
    loss : Tensor
        A single-valued tensor. If it does not require a gradient nothing
        is written.

    Notes
    -----
    Gradients accumulate: calling this twice without zeroing doubles them.

    """
    if loss.size != 1:
        raise ShapeError('backward needs a scalar loss, got shape {}'
                         .format(loss.shape))
    if not loss.requires_grad:
        return

    order = _topological_order(loss)
    pending = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._op is None:
            continue

        rule = GRADIENT_RULES[node._op]
        input_grads = rule(g, node, *node._inputs, **node._attrs)
        for inp, inp_grad in zip(node._inputs, input_grads):
            if inp_grad is None or not inp.requires_grad:
                continue
            inp_grad = unbroadcast(inp_grad, inp.shape)
            key = id(inp)
            if key in pending:
                pending[key] = pending[key] + inp_grad
            else:
                pending[key] = inp_grad
