"""Dense float tensors with reverse-mode gradients recorded on an explicit tape.

Every operation appends a backward closure to the active tape. backward()
replays those closures in exact reverse execution order and accumulates
gradients additively, so two identical passes produce bit-identical grads.
Training graphs run in float32; verification (finite differences) builds the
same graphs from float64 leaves and inherits the wider dtype everywhere.
"""

from __future__ import annotations

import numpy as np

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

LEAKY_SLOPE = 0.2


class Tensor:
    """N-d float array plus an optional accumulated gradient."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

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

    def item(self):
        return float(self.data)

    def detach(self):
        """Same values, cut off from the tape (no gradient flows through)."""
        return Tensor(self.data, requires_grad=False)

    def accumulate_grad(self, g, own=False):
        g = np.asarray(g, dtype=self.data.dtype)
        if self.grad is None:
            # Copy unless the caller hands over a freshly built array it will
            # never touch again; incoming arrays may alias other grads.
            self.grad = g if own else np.array(g, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic sugar; the real work lives in the module-level ops.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed operations; a context manager.

    Only one tape is active at a time (nesting restores the outer one).
    With no active tape, ops run forward-only and record nothing.
    """

    _current = None

    def __init__(self):
        self._records = []
        self._outputs = []
        self._outer = None

    @classmethod
    def current(cls):
        return cls._current

    def __enter__(self):
        self._outer = Tape._current
        Tape._current = self
        return self

    def __exit__(self, exc_type, exc, tb):
        Tape._current = self._outer
        return False

    def record(self, outputs, backward_fn):
        self._outputs.extend(outputs)
        self._records.append(backward_fn)

    def __len__(self):
        return len(self._records)

    def backward(self, root):
        """Seed d(root)/d(root) = 1 and replay the tape in reverse.

        Grads of intermediate (op output) tensors are reset first, so the
        tape supports several backward calls with different roots; leaf
        grads persist and accumulate until the caller clears them.
        """
        if root.size != 1:
            raise ValueError("backward root must be a scalar tensor")
        for out in self._outputs:
            out.grad = None
        root.grad = np.ones_like(root.data)
        for fn in reversed(self._records):
            fn()


def record_op(outputs, backward_fn):
    """Attach a backward closure to the active tape, if recording."""
    tape = Tape._current
    if tape is not None and any(o.requires_grad for o in outputs):
        tape.record(outputs, backward_fn)


def _lift(x, like=None):
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if isinstance(like, Tensor) else None
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _binary(a, b, fwd, da, db):
    a = _lift(a, like=b if isinstance(b, Tensor) else None)
    b = _lift(b, like=a)
    out = Tensor(fwd(a.data, b.data), requires_grad=a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(_unbroadcast(da(g, a.data, b.data, out.data), a.shape))
        if b.requires_grad:
            b.accumulate_grad(_unbroadcast(db(g, a.data, b.data, out.data), b.shape))

    record_op((out,), backward)
    return out


def _unary(x, fwd, dx):
    x = _lift(x)
    out = Tensor(fwd(x.data), requires_grad=x.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(dx(g, x.data, out.data))

    record_op((out,), backward)
    return out


def add(a, b):
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y, o: g, lambda g, x, y, o: g)


def sub(a, b):
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y, o: g, lambda g, x, y, o: -g)


def mul(a, b):
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y, o: g * y, lambda g, x, y, o: g * x)


def div(a, b):
    return _binary(
        a, b, lambda x, y: x / y,
        lambda g, x, y, o: g / y,
        lambda g, x, y, o: -g * x / (y * y),
    )


def neg(x):
    return _unary(x, lambda v: -v, lambda g, v, o: -g)


def exp(x):
    return _unary(x, np.exp, lambda g, v, o: g * o)


def log(x):
    def fwd(v):
        with np.errstate(divide="ignore"):
            return np.log(v)

    return _unary(x, fwd, lambda g, v, o: g / v)


def sigmoid(x):
    # tanh form is stable for large |x|
    return _unary(
        x,
        lambda v: 0.5 * (1.0 + np.tanh(0.5 * v)),
        lambda g, v, o: g * o * (1.0 - o),
    )


def softplus(x):
    """log(1 + e^x), computed without overflow for large |x|."""
    return _unary(
        x,
        lambda v: np.logaddexp(np.zeros((), dtype=v.dtype), v),
        lambda g, v, o: g * 0.5 * (1.0 + np.tanh(0.5 * v)),
    )


def leaky_relu(x, slope=LEAKY_SLOPE):
    x = _lift(x)
    one, k = x.data.dtype.type(1.0), x.data.dtype.type(slope)
    factor = np.where(x.data >= 0, one, k)
    out = Tensor(x.data * factor, requires_grad=x.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(g * factor, own=True)

    record_op((out,), backward)
    return out


def absolute(x):
    return _unary(x, np.abs, lambda g, v, o: g * np.sign(v))


def clamp01(x):
    """Clip to [0, 1]; gradient passes only where the input is interior."""
    return _unary(
        x,
        lambda v: np.clip(v, 0.0, 1.0),
        lambda g, v, o: g * ((v > 0.0) & (v < 1.0)).astype(v.dtype),
    )


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    record_op((out,), backward)
    return out


def tsum(x, axis=None, keepdims=False):
    x = _lift(x)
    out = Tensor(x.data.sum(axis=axis, keepdims=keepdims), requires_grad=x.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x.accumulate_grad(np.broadcast_to(g, x.shape))

    record_op((out,), backward)
    return out


def tmean(x, axis=None, keepdims=False):
    x = _lift(x)
    if axis is None:
        count = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= x.shape[ax]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
    )
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward():
        g = out.grad
        if g is None:
            return
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t.accumulate_grad(g[tuple(idx)])

    record_op((out,), backward)
    return out


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    x = _lift(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(x.data[idx], requires_grad=x.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        full = np.zeros_like(x.data)
        full[idx] = g
        x.accumulate_grad(full)

    record_op((out,), backward)
    return out


def reshape(x, shape):
    x = _lift(x)
    out = Tensor(x.data.reshape(shape), requires_grad=x.requires_grad)

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(g.reshape(x.shape))

    record_op((out,), backward)
    return out


def transpose(x, axes):
    x = _lift(x)
    out = Tensor(np.transpose(x.data, axes), requires_grad=x.requires_grad)
    inverse = np.argsort(axes)

    def backward():
        g = out.grad
        if g is None:
            return
        x.accumulate_grad(np.transpose(g, inverse))

    record_op((out,), backward)
    return out
