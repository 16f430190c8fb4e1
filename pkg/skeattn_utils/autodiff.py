"""
Reverse-mode automatic differentiation over numpy arrays

The op set is deliberately small: matmul, elementwise add/mul, broadcast, relu,
sigmoid, exp, log, sum/mean, transpose/reshape, softmax, l2 normalisation and
concatenation. Everything else in the package (graph convolutions, attention,
contrastive losses, classifiers) is composed from these.

Tensors are immutable once created: their arrays are flagged read-only and
parameters change only by having a new array assigned between steps.
"""

import contextlib

import numpy as np

from skeattn_utils.errors import NonFiniteError, ShapeMismatchError, ZeroNormError

FLOAT_DTYPES = (np.float32, np.float64)

_state = {"debug": True, "grad_enabled": True}


def set_debug(flag):
    """
    Toggle the finite-value check performed after every forward op

    :param flag: True to raise NonFiniteError as soon as an op produces NaN/Inf
    """
    _state["debug"] = bool(flag)


def is_debug():
    return _state["debug"]


def is_grad_enabled():
    return _state["grad_enabled"]


@contextlib.contextmanager
def no_grad():
    """
    Context in which ops are evaluated without recording a graph
    """
    previous = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = previous


def _check_finite(data, op):
    if _state["debug"] and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by '{op}'")


def _freeze(array):
    array.setflags(write=False)
    return array


class Tensor:
    """
    Dense floating point array that records the ops applied to it

    :param data: array-like values. Integer input is promoted to float64
    :param requires_grad: whether gradients should flow back to this tensor
    :param dtype: optional float dtype to cast to
    """

    # make ndarray <op> Tensor dispatch to the Tensor reflected operators
    __array_priority__ = 100

    def __init__(
        self, data, requires_grad=False, dtype=None, _parents=(), _backward=None, _op=""
    ):
        if isinstance(data, Tensor):
            data = data.data
        if _backward is None:
            array = np.array(data, dtype=dtype, copy=True)
        else:
            array = np.asarray(data, dtype=dtype)
        if array.dtype not in FLOAT_DTYPES:
            array = array.astype(np.float64)
        if _backward is None:
            _check_finite(array, "leaf")

        self.data = _freeze(array)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # basic properties

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        if self.size != 1:
            raise ShapeMismatchError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        return _constant(self.data, "detach")

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op='{self._op or 'leaf'}')"

    # operators

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other, self.dtype)))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division is only supported by constants")
        return mul(self, 1.0 / np.asarray(other, dtype=self.dtype))

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    # method forms of the functional ops

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    # differentiation

    def backward(self, grad=None):
        """
        Propagate gradients from this tensor to every leaf that requires them

        Gradients are accumulated into leaf .grad attributes. Nodes are visited in
        reverse topological order, each exactly once.

        :param grad: upstream gradient. Defaults to 1 for a scalar tensor
        """
        if grad is None:
            if self.size != 1:
                raise ShapeMismatchError(
                    f"backward() without a gradient needs a scalar, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)

        pending = {id(self): np.asarray(grad, dtype=self.dtype)}
        for node in reversed(_topological_order(self)):
            node_grad = pending.pop(id(node), None)
            if node_grad is None:
                continue

            if node._backward is None:
                if node.requires_grad:
                    node.grad = node_grad if node.grad is None else node.grad + node_grad
                continue

            for parent, parent_grad in zip(node._parents, node._backward(node_grad)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad


class Parameter(Tensor):
    """
    Leaf tensor owned by a model

    Frozen parameters (trainable=False) never receive gradient; they only change
    through assign(), e.g. by a momentum update.
    """

    def __init__(self, data, trainable=True, dtype=None):
        super().__init__(data, requires_grad=trainable, dtype=dtype)

    @property
    def trainable(self):
        return self.requires_grad

    def assign(self, data):
        """
        Replace the value of the parameter with a new array of the same shape
        """
        array = np.array(data, dtype=self.dtype, copy=True)
        if array.shape != self.shape:
            raise ShapeMismatchError(
                f"cannot assign shape {array.shape} to parameter of shape {self.shape}"
            )
        _check_finite(array, "assign")
        self.data = _freeze(array)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Parameter(shape={self.shape}, dtype={self.dtype}, trainable={self.trainable})"


def _topological_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=dtype))


def _binary_operands(a, b):
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        return a, _as_tensor(b, a.dtype)
    if isinstance(b, Tensor) and not isinstance(a, Tensor):
        return _as_tensor(a, b.dtype), b
    return _as_tensor(a), _as_tensor(b)


def _constant(data, op):
    # wraps an op output without copying; the result is a graph leaf
    out = Tensor(data, _backward=_no_backward, _op=op)
    out._backward = None
    return out


def _result(data, parents, backward, op):
    _check_finite(data, op)
    requires_grad = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    if not requires_grad:
        return _constant(data, op)
    return Tensor(data, requires_grad=True, _parents=parents, _backward=backward, _op=op)


def _no_backward(grad):
    return ()


def unbroadcast(grad, shape):
    """
    Sum a gradient over the axes that broadcasting expanded so it matches shape
    """
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _normalise_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# elementwise ops


def add(a, b):
    a, b = _binary_operands(a, b)

    def backward(grad):
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)

    return _result(a.data + b.data, (a, b), backward, "add")


def mul(a, b):
    a, b = _binary_operands(a, b)

    def backward(grad):
        grad_a = unbroadcast(grad * b.data, a.shape) if a.requires_grad else None
        grad_b = unbroadcast(grad * a.data, b.shape) if b.requires_grad else None
        return grad_a, grad_b

    return _result(a.data * b.data, (a, b), backward, "mul")


def neg(a):
    a = _as_tensor(a)
    return _result(-a.data, (a,), lambda grad: (-grad,), "neg")


def broadcast_to(a, shape):
    a = _as_tensor(a)
    out = np.broadcast_to(a.data, shape)
    return _result(out, (a,), lambda grad: (unbroadcast(grad, a.shape),), "broadcast")


def relu(a):
    active = a.data > 0
    return _result(a.data * active, (a,), lambda grad: (grad * active,), "relu")


def _stable_sigmoid(x):
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    exp_x = np.exp(x[~positive])
    out[~positive] = exp_x / (1.0 + exp_x)
    # keep the range open so masks never saturate to exactly 0 or 1
    info = np.finfo(x.dtype)
    return np.clip(out, info.tiny, 1 - info.epsneg)


def sigmoid(a):
    out = _stable_sigmoid(a.data)
    return _result(out, (a,), lambda grad: (grad * out * (1 - out),), "sigmoid")


def exp(a):
    out = np.exp(a.data)
    return _result(out, (a,), lambda grad: (grad * out,), "exp")


def log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result(out, (a,), lambda grad: (grad / a.data,), "log")


# linear algebra


def matmul(a, b):
    a, b = _binary_operands(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul cannot contract {a.shape} with {b.shape}")

    def backward(grad):
        grad_a = grad_b = None
        if a.requires_grad:
            grad_a = unbroadcast(np.matmul(grad, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            grad_b = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), grad), b.shape)
        return grad_a, grad_b

    return _result(np.matmul(a.data, b.data), (a, b), backward, "matmul")


# reductions


def reduce_sum(a, axis=None, keepdims=False):
    axes = _normalise_axes(axis, a.ndim)

    def backward(grad):
        if not keepdims:
            grad = np.expand_dims(grad, axes)
        return (np.broadcast_to(grad, a.shape),)

    return _result(a.data.sum(axis=axes, keepdims=keepdims), (a,), backward, "sum")


def reduce_mean(a, axis=None, keepdims=False):
    axes = _normalise_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes]))
    return mul(reduce_sum(a, axes, keepdims), 1.0 / count)


# shape ops


def reshape(a, shape):
    out = a.data.reshape(shape)
    return _result(out, (a,), lambda grad: (grad.reshape(a.shape),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    out = np.transpose(a.data, axes)
    return _result(out, (a,), lambda grad: (np.transpose(grad, inverse),), "transpose")


def concatenate(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(grad):
        return tuple(np.split(grad, splits, axis=axis))

    out = np.concatenate([t.data for t in tensors], axis=axis)
    return _result(out, tuple(tensors), backward, "concatenate")


# normalisations


def softmax(a, axis=-1):
    """
    Softmax along an axis, stabilised by subtracting the maximum
    """
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(grad):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

    return _result(out, (a,), backward, "softmax")


def softmax_lastdim(a):
    return softmax(a, axis=-1)


def l2_normalize(a, axis=-1, eps=1e-12):
    """
    Scale vectors along an axis to unit Euclidean norm

    :raises ZeroNormError: if any norm is below eps
    """
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    if np.any(norm < eps):
        raise ZeroNormError(f"cannot normalise a vector with norm below {eps}")
    out = a.data / norm

    def backward(grad):
        return ((grad - out * (grad * out).sum(axis=axis, keepdims=True)) / norm,)

    return _result(out, (a,), backward, "l2_normalize")


# composites


def logsumexp(a, axis=-1, keepdims=False):
    """
    log(sum(exp(a))) along an axis with the maximum shifted out as a constant
    """
    shift = Tensor(a.data.max(axis=axis, keepdims=True))
    out = log(reduce_sum(exp(a - shift), axis=axis, keepdims=True)) + shift
    if not keepdims:
        out = reshape(out, np.squeeze(out.data, axis=axis).shape)
    return out


def softmax_cross_entropy(logits, labels, num_classes=None):
    """
    Mean softmax cross-entropy of (batch, classes) logits against integer labels
    """
    labels = np.asarray(labels, dtype=int)
    num_classes = num_classes or logits.shape[-1]
    one_hot = np.eye(num_classes, dtype=logits.dtype)[labels]
    picked = reduce_sum(logits * one_hot, axis=-1)
    return reduce_mean(logsumexp(logits, axis=-1) - picked)


def gradients(loss, parameters):
    """
    Run backward from a scalar loss and collect the gradient of each parameter

    Parameters the loss does not depend on get an all-zero gradient. Frozen
    parameters are reported as zeros too, since nothing flows into them.

    :param loss: scalar tensor
    :param parameters: mapping of name to Parameter
    :return: dict of name to gradient array, shapes matching the parameters
    """
    for parameter in parameters.values():
        parameter.grad = None
    loss.backward()
    return {
        name: (
            np.array(p.grad, dtype=p.dtype)
            if p.grad is not None
            else np.zeros(p.shape, dtype=p.dtype)
        )
        for name, p in parameters.items()
    }
