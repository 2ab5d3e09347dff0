"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation returns a new :class:`Tensor` holding its
parents and a closure mapping the output gradient to one gradient per
parent. :func:`backward` walks the graph once in reverse topological order.
Intermediate gradients live only for the duration of the walk; leaves that
require gradients accumulate into ``.grad`` across calls.

Binary operations broadcast only over *leading* axes: the shape of one
operand must be a suffix of the other's (a scalar is a suffix of anything).
Constant masks passed to :func:`softmax` and :func:`masked_fill` follow
ordinary numpy broadcasting since they never receive gradients.
"""

from __future__ import annotations

import builtins
import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DegenerateSliceError, DimensionError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A dense array that may take part in a differentiation graph.

    Parameters
    ----------
    data : array_like
        Values. Integer or boolean input is converted to ``dtype`` (float64
        when ``dtype`` is None).
    requires_grad : bool
        Whether ``backward`` should populate ``.grad`` for this leaf.
    dtype : numpy dtype, optional
        Storage precision, float32 or float64.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @classmethod
    def from_op(cls, data, parents: Sequence["Tensor"], backward: Callable):
        """Wrap the result of a custom operation.

        ``backward(grad)`` must return one array (or None) per parent, each
        shaped like that parent. The closure is only kept when some parent
        requires gradients and grad mode is on.
        """
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.name = None
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        else:
            out.requires_grad = False
            out._parents = ()
            out._backward = None
        return out

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    @property
    def is_leaf(self):
        return self._backward is None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data)

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self):
        return self.data.shape[0]

    # -- operators ----------------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def max(self, axis=None):
        return max(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self):
        """Swap the last two axes."""
        return transpose_last(self)

    def tanh(self):
        return tanh(self)

    def sigmoid(self):
        return sigmoid(self)

    def relu(self):
        return relu(self)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)


class Parameter(Tensor):
    """A trainable leaf tensor.

    ``frozen_rows`` optionally marks rows (first axis) that the optimizer
    must never change, e.g. the padding row or pretrained embeddings. A
    parameter with ``trainable=False`` is skipped by the optimizer entirely.
    """

    __slots__ = ("frozen_rows", "trainable")

    def __init__(self, data, dtype=None, name=None, frozen_rows=None, trainable=True):
        super().__init__(data, requires_grad=True, dtype=dtype, name=name)
        self.frozen_rows = None if frozen_rows is None else np.asarray(frozen_rows, dtype=bool)
        self.trainable = trainable


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


# -- broadcasting ---------------------------------------------------------------
def broadcast_shape(a: tuple, b: tuple) -> tuple:
    """Result shape of a trailing-dimension broadcast, or DimensionError."""
    if a == b:
        return a
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise DimensionError(
        f"shapes {a} and {b} are not compatible (only leading-axis broadcasting is supported)"
    )


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    return grad.reshape((-1,) + tuple(shape)).sum(axis=0)


def _binary(x, y):
    if not isinstance(x, Tensor) and not isinstance(y, Tensor):
        raise TypeError("at least one operand must be a Tensor")
    if not isinstance(x, Tensor):
        x = as_tensor(x, like=y)
    if not isinstance(y, Tensor):
        y = as_tensor(y, like=x)
    shape = broadcast_shape(x.shape, y.shape)
    return x, y, shape


# -- elementwise ----------------------------------------------------------------
def add(x, y) -> Tensor:
    x, y, _ = _binary(x, y)

    def _bw(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return Tensor.from_op(x.data + y.data, (x, y), _bw)


def sub(x, y) -> Tensor:
    x, y, _ = _binary(x, y)

    def _bw(g):
        return _unbroadcast(g, x.shape), -_unbroadcast(g, y.shape)

    return Tensor.from_op(x.data - y.data, (x, y), _bw)


def mul(x, y) -> Tensor:
    x, y, _ = _binary(x, y)

    def _bw(g):
        gx = _unbroadcast(g * y.data, x.shape) if x.requires_grad else None
        gy = _unbroadcast(g * x.data, y.shape) if y.requires_grad else None
        return gx, gy

    return Tensor.from_op(x.data * y.data, (x, y), _bw)


def div(x, y) -> Tensor:
    x, y, _ = _binary(x, y)
    out = x.data / y.data

    def _bw(g):
        gx = _unbroadcast(g / y.data, x.shape) if x.requires_grad else None
        gy = _unbroadcast(-g * out / y.data, y.shape) if y.requires_grad else None
        return gx, gy

    return Tensor.from_op(out, (x, y), _bw)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def _sigmoid(z):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return Tensor.from_op(np.where(keep, x.data, 0.0).astype(x.dtype), (x,), lambda g: (g * keep,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return Tensor.from_op(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return Tensor.from_op(np.log(x.data), (x,), lambda g: (g / x.data,))


# -- linear algebra ---------------------------------------------------------------
def matmul(x: Tensor, y: Tensor) -> Tensor:
    """Matrix product over the last two axes.

    ``y`` is either a plain matrix shared across all leading axes of ``x``
    or carries exactly the same leading axes as ``x``.
    """
    x, y = as_tensor(x), as_tensor(y)
    if x.ndim < 2 or y.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {x.shape} and {y.shape}")
    if x.shape[-1] != y.shape[-2]:
        raise DimensionError(f"matmul inner dimensions differ: {x.shape} @ {y.shape}")
    shared = y.ndim == 2
    if not shared and x.shape[:-2] != y.shape[:-2]:
        raise DimensionError(f"matmul batch axes differ: {x.shape} @ {y.shape}")
    out = np.matmul(x.data, y.data)

    def _bw(g):
        gx = np.matmul(g, np.swapaxes(y.data, -1, -2)) if x.requires_grad else None
        gy = None
        if y.requires_grad:
            if shared:
                gy = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gy = np.matmul(np.swapaxes(x.data, -1, -2), g)
        return gx, gy

    return Tensor.from_op(out, (x, y), _bw)


def transpose_last(x: Tensor) -> Tensor:
    if x.ndim < 2:
        raise DimensionError(f"cannot swap the last two axes of shape {x.shape}")
    return Tensor.from_op(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x: Tensor, shape) -> Tensor:
    return Tensor.from_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def _bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g) if _is_fancy(index) else _assign(full, index, g)
        return (full,)

    return Tensor.from_op(out, (x,), _bw)


def _is_fancy(index):
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _assign(full, index, g):
    full[index] = g


def concat(tensors: Sequence[Tensor], axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0]
    ax = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or t.shape[:ax] + t.shape[ax + 1:] != ref.shape[:ax] + ref.shape[ax + 1:]:
            raise DimensionError(f"cannot concatenate {ref.shape} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=ax)
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=ax))

    return Tensor.from_op(out, tensors, _bw)


def stack(tensors: Sequence[Tensor], axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"cannot stack {tensors[0].shape} and {t.shape}")
    out = np.stack([t.data for t in tensors], axis=axis)
    ax = axis % out.ndim

    def _bw(g):
        return tuple(np.moveaxis(g, ax, 0))

    return Tensor.from_op(out, tensors, _bw)


# -- reductions -------------------------------------------------------------------
def _check_axis(x, axis):
    axes = axis if isinstance(axis, tuple) else (axis,)
    for a in axes:
        if a is not None and not -x.ndim <= a < x.ndim:
            raise DimensionError(f"axis {a} is invalid for shape {x.shape}")


def sum(x: Tensor, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    _check_axis(x, axis)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return Tensor.from_op(np.asarray(out), (x,), _bw)


def mean(x: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_axis(x, axis)
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


def max(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    """Maximum along one axis (or of all entries).

    The gradient of each reduced slice goes to a single element, the first
    maximal one, so ties always resolve toward the lowest index.
    """
    _check_axis(x, axis)
    if axis is None:
        flat = reshape(x, (-1,))
        return max(flat, 0)
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def _bw(g):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, np.expand_dims(g, axis), axis=axis)
        return (full,)

    return Tensor.from_op(out, (x,), _bw)


def argmax(x: Tensor, axis):
    """Index picked by :func:`max` (lowest index among ties)."""
    return np.argmax(x.data, axis=axis)


# -- normalisation ----------------------------------------------------------------
def softmax(x: Tensor, axis=-1, mask=None) -> Tensor:
    """Numerically stable softmax, optionally restricted to ``mask``.

    Masked entries get probability exactly 0. A slice with no unmasked
    entry raises DegenerateSliceError.
    """
    _check_axis(x, axis)
    z = x.data
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        if not keep.any(axis=axis).all():
            raise DegenerateSliceError("softmax slice has every position masked")
        z = np.where(keep, z, -np.inf)
    shifted = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op(out.astype(x.dtype, copy=False), (x,), _bw)


def log_softmax(x: Tensor, axis=-1) -> Tensor:
    z = x.data - np.max(x.data, axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def _bw(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return Tensor.from_op(out, (x,), _bw)


def masked_fill(x: Tensor, mask, value) -> Tensor:
    """Replace entries where ``mask`` is True by a constant."""
    fill = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(fill, np.asarray(value, dtype=x.dtype), x.data)
    return Tensor.from_op(out, (x,), lambda g: (np.where(fill, 0.0, g).astype(g.dtype),))


def take(table: Tensor, ids) -> Tensor:
    """Row lookup ``table[ids]`` for an integer array of any shape."""
    ids = np.asarray(ids)
    out = table.data[ids]

    def _bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
        return (full,)

    return Tensor.from_op(out, (table,), _bw)


# -- graph traversal -------------------------------------------------------------
def _topological(root: Tensor):
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` of every leaf reachable from a scalar ``loss``.

    Gradients add onto whatever ``.grad`` already holds.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor requiring gradients")
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topological(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- finite-difference checking -------------------------------------------------
def grad_check_errors(forward: Callable[[], Tensor], params: Iterable[Tensor], epsilon=1e-4,
                      oracle_dtype=None):
    """Worst relative gradient error for each parameter.

    Compares analytic gradients with central differences
    ``(f(p + eps) - f(p - eps)) / 2 eps`` element by element; the relative
    error is ``|g - g_fd| / max(|g|, |g_fd|, 1e-8)``. Rows listed in a
    parameter's ``frozen_rows`` are skipped.

    ``oracle_dtype`` (e.g. ``np.longdouble``) evaluates the perturbed
    forwards in a wider float type while the analytic gradient keeps the
    parameter's own precision. Round-off in the difference quotient is
    about ``ulp(f) / eps``, which swamps gradients near the 1e-8 floor
    at 64 bits.
    """
    params = list(params)
    with no_grad():
        base = float(forward().data)
        again = float(forward().data)
    if base != again:
        raise ContractError("forward is not deterministic; disable dropout and fix seeds")

    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    loss = forward()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p, s in zip(params, saved):
        p.grad = s

    errors = []
    with no_grad():
        for p, g in zip(params, analytic):
            original = p.data
            if oracle_dtype is not None:
                p.data = original.astype(oracle_dtype)
            worst = 0.0
            flat = p.data.reshape(-1)
            skip = None
            if getattr(p, "frozen_rows", None) is not None and p.ndim >= 1:
                skip = np.repeat(p.frozen_rows, flat.size // p.shape[0])
            try:
                for i in range(flat.size):
                    if skip is not None and skip[i]:
                        continue
                    orig = flat[i]
                    flat[i] = up = orig + epsilon
                    f_plus = forward().data
                    flat[i] = down = orig - epsilon
                    f_minus = forward().data
                    flat[i] = orig
                    numeric = float((f_plus - f_minus) / (up - down))
                    exact = float(g.reshape(-1)[i])
                    err = abs(exact - numeric) / builtins.max(abs(exact), abs(numeric), 1e-8)
                    worst = err if err > worst else worst
            finally:
                p.data = original
            errors.append(worst)
    return errors


def grad_check(forward: Callable[[], Tensor], params: Iterable[Tensor], epsilon=1e-4, oracle_dtype=None) -> float:
    """Maximum relative error over all elements of all ``params``."""
    errs = grad_check_errors(forward, params, epsilon, oracle_dtype)
    return float(np.max(errs)) if errs else 0.0
