"""Float64 tensors with a reverse-mode gradient tape.

A :class:`Tensor` wraps a numpy array. Operations on tensors record a node on
the innermost active :class:`GradientTape` whenever one of their inputs
requires a gradient; outside a tape they are plain numpy computations.

    >>> w = Tensor(np.ones((2, 2)), requires_grad=True)
    >>> with GradientTape() as tape:
    ...     loss = (w * w).sum()
    >>> tape.gradient(loss, [w])[0]
    array([[2., 2.],
           [2., 2.]])
"""
from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import DegenerateInputError, NumericError, ShapeError

_state = threading.local()


def _tape_stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = _state.stack = []
    return stack


class _Node:
    __slots__ = ("out", "parents", "backward")

    def __init__(self, out, parents, backward):
        self.out = out
        self.parents = parents
        self.backward = backward


class GradientTape:
    """Records differentiable operations executed inside its ``with`` block.

    One tape per training step; tapes are not shared between threads.
    """

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().pop()
        return False

    def gradient(self, target: "Tensor", sources: Sequence["Tensor"]) -> list[np.ndarray]:
        """Gradients of scalar ``target`` with respect to each of ``sources``.

        Sources the target does not depend on get a zero array of their shape.
        """
        if target.data.size != 1:
            raise ShapeError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for node in reversed(self._nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        out = []
        for s in sources:
            g = grads.get(id(s))
            out.append(np.zeros_like(s.data) if g is None else np.asarray(g, dtype=np.float64).reshape(s.shape))
        return out


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def T(self):
        return transpose(self)

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __len__(self):
        return len(self.data)

    __add__ = lambda self, o: add(self, o)
    __radd__ = lambda self, o: add(o, self)
    __sub__ = lambda self, o: sub(self, o)
    __rsub__ = lambda self, o: sub(o, self)
    __mul__ = lambda self, o: mul(self, o)
    __rmul__ = lambda self, o: mul(o, self)
    __truediv__ = lambda self, o: div(self, o)
    __rtruediv__ = lambda self, o: div(o, self)
    __neg__ = lambda self: neg(self)
    __matmul__ = lambda self, o: matmul(self, o)
    __rmatmul__ = lambda self, o: matmul(o, self)
    __pow__ = lambda self, p: power(self, p)
    __getitem__ = lambda self, idx: getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(value, parents, backward) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out = Tensor(value, requires_grad=True)
        tape._nodes.append(_Node(out, parents, backward))
        return out
    return Tensor(value)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    value = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * value / b.data, b.shape))

    return _result(value, (a, b), backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _result(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    value = np.exp(a.data)
    return _result(value, (a,), lambda g: (g * value,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    value = np.sqrt(a.data)
    return _result(value, (a,), lambda g: (g * 0.5 / value,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    value = np.tanh(a.data)
    return _result(value, (a,), lambda g: (g * (1.0 - value * value),))


def gelu(a) -> Tensor:
    """Tanh approximation of GELU."""
    a = as_tensor(a)
    value, deriv = kernels.gelu(a.data)
    return _result(value, (a,), lambda g: (g * deriv,))


# ---------------------------------------------------------------------------
# reductions and shape ops
# ---------------------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = sorted(ax % len(shape) for ax in axes)
        for ax in axes:
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    value = a.data.sum(axis=axis, keepdims=keepdims)
    return _result(value, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims),))


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    value = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size // max(1, value.size)
    return _result(value, (a,),
                   lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def getitem(a, idx) -> Tensor:
    """Basic or integer-array indexing; repeated indices accumulate gradient."""
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result(a.data[idx], (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    value = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(value, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    """Matrix product (batched over leading axes, numpy semantics).

    Returns a plain ndarray when both operands are ndarrays, a :class:`Tensor`
    otherwise. Raises :class:`ShapeError` on inner-dimension mismatch.
    """
    plain = not isinstance(a, Tensor) and not isinstance(b, Tensor)
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim < 1:
        raise ShapeError("matmul needs at least 1-d operands")
    inner_a = a.shape[-1]
    inner_b = b.shape[-2] if b.ndim >= 2 else b.shape[0]
    if inner_a != inner_b:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    value = np.matmul(a.data, b.data)
    if plain:
        return value

    def backward(g):
        ad, bd = a.data, b.data
        if ad.ndim == 1 or bd.ndim == 1:
            a2 = ad[None, :] if ad.ndim == 1 else ad
            b2 = bd[:, None] if bd.ndim == 1 else bd
            g2 = g
            if ad.ndim == 1:
                g2 = np.expand_dims(g2, -2)
            if bd.ndim == 1:
                g2 = np.expand_dims(g2, -1)
            ga = np.matmul(g2, np.swapaxes(b2, -1, -2))
            gb = np.matmul(np.swapaxes(a2, -1, -2), g2)
            if ad.ndim == 1:
                ga = ga.reshape(ga.shape[:-2] + (ga.shape[-1],))
            if bd.ndim == 1:
                gb = gb.reshape(gb.shape[:-2] + (gb.shape[-2],))
            return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _result(value, (a, b), backward)


def l2_normalize(v, axis: int = -1, eps: float = 0.0):
    """Scale ``v`` to unit Euclidean norm along ``axis``.

    Raises :class:`DegenerateInputError` if any slice has zero norm rather
    than returning zeros. Returns an ndarray for ndarray input.
    """
    plain = not isinstance(v, Tensor)
    v = as_tensor(v)
    norm = np.sqrt(np.sum(v.data * v.data, axis=axis, keepdims=True))
    if np.any(norm <= eps):
        raise DegenerateInputError("cannot L2-normalize a zero vector")
    value = v.data / norm
    if plain:
        return value

    def backward(g):
        dot = np.sum(g * value, axis=axis, keepdims=True)
        return ((g - value * dot) / norm,)

    return _result(value, (v,), backward)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    value = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (value * (g - np.sum(g * value, axis=axis, keepdims=True)),)

    return _result(value, (a,), backward)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(a.data - m).sum(axis=axis, keepdims=True))
    value = a.data - lse

    def backward(g):
        return (g - np.exp(value) * g.sum(axis=axis, keepdims=True),)

    return _result(value, (a,), backward)


def cross_entropy(logits, targets) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over the rows of a (B, K) tensor."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy expects (B, K) logits and (B,) targets, got "
                         f"{logits.shape} and {targets.shape}")
    if np.any(targets < 0) or np.any(targets >= logits.shape[1]):
        raise IndexError("target index out of range")
    lp = log_softmax(logits, axis=1)
    picked = getitem(lp, (np.arange(logits.shape[0]), targets))
    return neg(mean(picked))


def softmax_cross_entropy(logits, target_index: int) -> Tensor:
    """``-log(exp(l_t) / sum_i exp(l_i))`` for one logit vector, max-shifted."""
    logits = as_tensor(logits)
    if logits.ndim != 1:
        raise ShapeError("softmax_cross_entropy expects a 1-d logit vector")
    if not 0 <= target_index < logits.shape[0]:
        raise IndexError(f"target index {target_index} out of range for {logits.shape[0]} logits")
    if not np.all(np.isfinite(logits.data)):
        raise NumericError("non-finite logits")
    return cross_entropy(reshape(logits, (1, -1)), [target_index])


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(centered * centered, axis=-1, keepdims=True)
    return centered / sqrt(var + eps) * gain + bias


# ---------------------------------------------------------------------------
# finite-difference verification
# ---------------------------------------------------------------------------


def grad_check(f: Callable[..., Tensor], params: Sequence[np.ndarray], step: float = 1e-5) -> float:
    """Compare tape gradients of ``f`` with central finite differences.

    ``f`` receives one :class:`Tensor` per array in ``params`` and must return
    a scalar tensor. The arrays are copied; the caller's data is untouched.
    The difference quotient is the fourth-order central stencil
    ``(8 (f(x+h) - f(x-h)) - (f(x+2h) - f(x-2h))) / 12h``; the plain two-point
    quotient's O(h^2) error alone exceeds 1e-4 relative on layer norms over
    small-scale inputs.

    Returns:
        max over coordinates of ``|g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)``.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    tensors = [Tensor(p, requires_grad=True) for p in params]
    with GradientTape() as tape:
        out = f(*tensors)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("grad_check: f is not finite at the base point")
    analytic = tape.gradient(out, tensors)

    def evaluate():
        val = f(*[Tensor(p) for p in params]).item()
        if not math.isfinite(val):
            raise NumericError("grad_check: f is not finite at a perturbed point")
        return val

    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.reshape(-1)
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            values = []
            for offset in (step, -step, 2.0 * step, -2.0 * step):
                flat[i] = orig + offset
                values.append(evaluate())
            flat[i] = orig
            fd = (8.0 * (values[0] - values[1]) - (values[2] - values[3])) / (12.0 * step)
            err = abs(ga[i] - fd) / max(1e-8, abs(ga[i]) + abs(fd))
            worst = max(worst, err)
    return worst
