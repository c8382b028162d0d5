"""Dense tensors with tape-based reverse-mode differentiation.

Every differentiable operation executed while gradients are enabled is
appended to the current thread's :class:`Tape`.  ``backward`` walks that
tape in exact reverse order, so the tape is both the execution record and
the topological order.  A tape is single-use: after ``backward`` it is
marked consumed and a fresh tape becomes current.

Storage is row-major float64 by default; transposes materialise a
contiguous copy instead of producing strided views.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, EmptyMaskError, GraphError

MASK_FILL = -1e9
DEFAULT_DTYPE = np.float64

_local = threading.local()


class Node:
    __slots__ = ("inputs", "output", "backward", "op")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable operations."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None or tape.consumed:
        tape = _local.tape = Tape()
    return tape


def new_tape() -> Tape:
    """Discard the current tape (if any) and start an empty one."""
    _local.tape = Tape()
    return _local.tape


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = prev


class Tensor:
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        dtype = dtype or (data.dtype if isinstance(data, np.ndarray)
                          and data.dtype in (np.float32, np.float64) else DEFAULT_DTYPE)
        self.data = np.ascontiguousarray(np.asarray(data, dtype=dtype))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self._tape: Tape | None = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def tracked(self):
        return self.requires_grad or self._node is not None

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- arithmetic ----------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    def relu(self):
        return relu(self)

    def sigmoid(self):
        return sigmoid(self)

    def abs(self):
        return abs_(self)

    def exp(self):
        return exp(self)

    def backward(self):
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op, inputs, out_data, backward_fn):
    out = Tensor(out_data, dtype=out_data.dtype if out_data.dtype in (np.float32, np.float64) else None)
    if is_grad_enabled() and any(t.tracked for t in inputs):
        tape = current_tape()
        node = Node(op, inputs, out, backward_fn)
        tape.nodes.append(node)
        out._node = node
        out._tape = tape
    return out


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise -----------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _record("add", (a, b), a.data + b.data, bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _record("sub", (a, b), a.data - b.data, bw)


def mul(a, b):
    """Hadamard product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.tracked else None
        gb = _unbroadcast(g * a.data, b.shape) if b.tracked else None
        return ga, gb

    return _record("mul", (a, b), a.data * b.data, bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.tracked else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.tracked else None
        return ga, gb

    return _record("div", (a, b), out, bw)


def relu(x):
    x = as_tensor(x)
    pos = x.data > 0

    def bw(g):
        return (g * pos,)

    return _record("relu", (x,), np.where(pos, x.data, 0.0).astype(x.dtype), bw)


def sigmoid(x):
    x = as_tensor(x)
    e = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype)

    def bw(g):
        return (g * y * (1.0 - y),)

    return _record("sigmoid", (x,), y, bw)


def abs_(x):
    x = as_tensor(x)

    def bw(g):
        return (g * np.sign(x.data),)

    return _record("abs", (x,), np.abs(x.data), bw)


def exp(x):
    x = as_tensor(x)
    y = np.exp(x.data)

    def bw(g):
        return (g * y,)

    return _record("exp", (x,), y, bw)


def elementwise(op: str, *operands):
    """Dispatch by name: add, sub, mul, relu, sigmoid, abs."""
    table = {"add": add, "sub": sub, "mul": mul, "relu": relu, "sigmoid": sigmoid, "abs": abs_}
    try:
        fn = table[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands)


# -- reductions and shape ----------------------------------------------------

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _record("sum", (x,), np.asarray(out), bw)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.size
    else:
        axes = (axis,) if isinstance(axis, int) else axis
        count = int(np.prod([x.shape[a] for a in axes]))
    return sum_(x, axis, keepdims) / float(count)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None

    def bw(g):
        return (g.reshape(x.shape),)

    return _record("reshape", (x,), out, bw)


def transpose(x, axes=None):
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))

    def bw(g):
        return (np.ascontiguousarray(g.transpose(inv)),)

    return _record("transpose", (x,), np.ascontiguousarray(x.data.transpose(axes)), bw)


def concat_lastaxis(*tensors):
    """Concatenate along the last axis; all other axes must agree."""
    if len(tensors) == 1 and isinstance(tensors[0], (list, tuple)):
        tensors = tuple(tensors[0])
    tensors = tuple(as_tensor(t) for t in tensors)
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            shapes = " and ".join(str(s.shape) for s in tensors)
            raise DimensionError(f"concat_lastaxis: leading shapes differ: {shapes}")
    splits = np.cumsum([t.shape[-1] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=-1))

    return _record("concat", tensors, np.concatenate([t.data for t in tensors], axis=-1), bw)


# -- linear algebra ------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents of {a.shape} and {b.shape} do not broadcast") from None

    if b.ndim == 2 and a.ndim > 2:
        # Fold batch axes into rows so BLAS sees a single GEMM.
        k = a.shape[-1]
        a2 = a.data.reshape(-1, k)

        def bw2(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.tracked else None
            gb = a2.T @ g2 if b.tracked else None
            return ga, gb

        return _record("matmul", (a, b), (a2 @ b.data).reshape(a.shape[:-1] + (b.shape[-1],)), bw2)

    def bw(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.tracked else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.tracked else None
        return ga, gb

    return _record("matmul", (a, b), np.matmul(a.data, b.data), bw)


def softmax_lastaxis(x, additive_mask=None):
    """Softmax over the last axis after adding an optional constant mask.

    The mask is treated as a constant; it is typically 0 with ``MASK_FILL``
    at suppressed positions.
    """
    x = as_tensor(x)
    z = x.data
    if additive_mask is not None:
        m = additive_mask.data if isinstance(additive_mask, Tensor) else np.asarray(additive_mask)
        try:
            np.broadcast_shapes(m.shape, x.shape)
        except ValueError:
            raise DimensionError(f"softmax: mask {m.shape} does not broadcast to {x.shape}") from None
        z = z + m
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _record("softmax", (x,), y, bw)


def layer_norm(x, gain, bias, eps=1e-5):
    """Normalise over the last axis, then apply ``gain * xhat + bias``."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    n = x.shape[-1]

    def bw(g):
        gx = ggain = gbias = None
        if gain.tracked:
            ggain = _unbroadcast(g * xhat, gain.shape)
        if bias.tracked:
            gbias = _unbroadcast(g, bias.shape)
        if x.tracked:
            gh = g * gain.data
            gx = inv / n * (n * gh - gh.sum(axis=-1, keepdims=True)
                            - xhat * (gh * xhat).sum(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _record("layer_norm", (x, gain, bias), xhat * gain.data + bias.data, bw)


# -- losses ------------------------------------------------------------------------

def masked_mae(estimation, target, mask):
    """Mean absolute error over positions where ``mask`` is 1.

    Raises :class:`EmptyMaskError` when the mask selects nothing.
    """
    estimation = as_tensor(estimation)
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=estimation.dtype)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=estimation.dtype)
    if not (estimation.shape == tgt.shape == m.shape):
        raise DimensionError(
            f"masked_mae: shapes differ: {estimation.shape}, {tgt.shape}, {m.shape}")
    denom = float(m.sum())
    if denom == 0:
        raise EmptyMaskError("masked_mae: mask selects no positions")
    return abs_((estimation - tgt) * m).sum() / denom


# -- backward -------------------------------------------------------------------------

def backward(loss: Tensor):
    """Populate ``.grad`` of every ``requires_grad`` leaf reachable from ``loss``.

    Leaf gradients accumulate across calls until cleared with ``zero_grad``.
    """
    if loss.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    node = loss._node
    if node is None:
        if loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
            return
        raise GraphError("loss was not produced by recorded operations")
    tape = loss._tape
    if tape.consumed:
        raise GraphError("graph already consumed by a previous backward call")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.tracked:
                continue
            if t._node is None:
                _accumulate(t, gi)
            else:
                key = id(t)
                grads[key] = gi if key not in grads else grads[key] + gi
    tape.consumed = True
    tape.nodes = []


def _accumulate(leaf, g):
    if not leaf.requires_grad:
        return
    g = np.asarray(g, dtype=leaf.dtype).reshape(leaf.shape)
    leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
