"""Reverse-mode differentiation over numpy arrays.

Each :class:`Var` wraps a float64 array and remembers the primitive that
produced it. Calling :func:`backward` on a scalar walks the recorded graph
once in reverse topological order and accumulates exact gradients.

The engine is deliberately small: it supports the handful of primitives a
radiance-field forward pass needs (elementwise arithmetic and transcendental
functions, batched matrix-vector products, activations, reductions, a
running sum along one axis and a few structural ops). Broadcasting follows
numpy rules; gradients are summed back to each operand's shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np


class DomainError(ArithmeticError):
    """Raised when a primitive is evaluated outside its domain."""


class Var:
    __slots__ = ("value", "parents", "grad_fn", "needs_grad")

    __array_priority__ = 100.0  # make ``ndarray + Var`` defer to Var

    def __init__(self, value, parents: tuple = (), grad_fn=None, needs_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.grad_fn = grad_fn
        self.needs_grad = needs_grad

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Var(shape={self.shape}, needs_grad={self.needs_grad})"

    # arithmetic sugar -------------------------------------------------------
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

    def __getitem__(self, index):
        return getitem(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None):
        return sum_(self, axis)


def leaf(value, needs_grad: bool = True) -> Var:
    """Create an input node. Constants should pass ``needs_grad=False``."""
    return Var(value, needs_grad=needs_grad)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _node(value, parents: tuple, grad_fn) -> Var:
    # Only keep the backward closure when some operand is on a gradient path.
    if any(p.needs_grad for p in parents):
        return Var(value, parents, grad_fn, True)
    return Var(value)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# elementwise binary -----------------------------------------------------------

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _node(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    sa, sb = a.shape, b.shape
    return _node(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value

    def grad_fn(g):
        return (
            _unbroadcast(g * bv, av.shape) if a.needs_grad else None,
            _unbroadcast(g * av, bv.shape) if b.needs_grad else None,
        )

    return _node(av * bv, (a, b), grad_fn)


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    av, bv = a.value, b.value
    if np.any(bv == 0):
        raise DomainError("division by zero")
    out = av / bv

    def grad_fn(g):
        return (
            _unbroadcast(g / bv, av.shape) if a.needs_grad else None,
            _unbroadcast(-g * out / bv, bv.shape) if b.needs_grad else None,
        )

    return _node(out, (a, b), grad_fn)


# elementwise unary --------------------------------------------------------------

def neg(a) -> Var:
    a = as_var(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def scale(a, c: float) -> Var:
    """Multiply by a constant (used for the power-of-two frequency bands)."""
    a = as_var(a)
    c = float(c)
    return _node(a.value * c, (a,), lambda g: (g * c,))


def exp(a) -> Var:
    a = as_var(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a) -> Var:
    a = as_var(a)
    if np.any(a.value <= 0):
        raise DomainError("log of non-positive value")
    av = a.value
    return _node(np.log(av), (a,), lambda g: (g / av,))


def sin(a) -> Var:
    a = as_var(a)
    av = a.value
    return _node(np.sin(av), (a,), lambda g: (g * np.cos(av),))


def cos(a) -> Var:
    a = as_var(a)
    av = a.value
    return _node(np.cos(av), (a,), lambda g: (-g * np.sin(av),))


def relu(a) -> Var:
    a = as_var(a)
    out = np.maximum(a.value, 0.0)
    return _node(out, (a,), lambda g: (g * (out > 0),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free and gives sigmoid(0) == 0.5 exactly
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a) -> Var:
    a = as_var(a)
    s = _sigmoid(a.value)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def softplus(a) -> Var:
    a = as_var(a)
    av = a.value
    return _node(np.logaddexp(0.0, av), (a,), lambda g: (g * _sigmoid(av),))


# linear algebra and reductions --------------------------------------------------

def matvec(w, x) -> Var:
    """Apply matrix ``w`` (out, in) to every vector in ``x`` (..., in)."""
    w, x = as_var(w), as_var(x)
    wv, xv = w.value, x.value
    if wv.ndim != 2 or xv.shape[-1] != wv.shape[1]:
        raise ValueError(f"matvec shape mismatch: {wv.shape} x {xv.shape}")

    def grad_fn(g):
        gw = gx = None
        if w.needs_grad:
            gw = g.reshape(-1, wv.shape[0]).T @ xv.reshape(-1, wv.shape[1])
        if x.needs_grad:
            gx = g @ wv
        return gw, gx

    return _node(xv @ wv.T, (w, x), grad_fn)


def sum_(a, axis=None) -> Var:
    a = as_var(a)
    shape = a.shape
    out = a.value.sum(axis=axis)

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _node(out, (a,), grad_fn)


def squared_norm(a, axis=None) -> Var:
    a = as_var(a)
    av = a.value

    def grad_fn(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (2.0 * g * av,)

    return _node(np.sum(av * av, axis=axis), (a,), grad_fn)


def cumsum(a, axis: int = -1) -> Var:
    """Running sum along ``axis``; the gradient is the reversed running sum."""
    a = as_var(a)

    def grad_fn(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _node(np.cumsum(a.value, axis=axis), (a,), grad_fn)


# structural -----------------------------------------------------------------------

def concat(items: Sequence, axis: int = -1) -> Var:
    items = [as_var(x) for x in items]
    values = [x.value for x in items]
    out = np.concatenate(values, axis=axis)
    bounds = np.cumsum([v.shape[axis] for v in values])[:-1]

    def grad_fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(items), grad_fn)


def getitem(a, index) -> Var:
    a = as_var(a)
    shape = a.shape

    basic = isinstance(index, (slice, int)) or (
        isinstance(index, tuple) and all(isinstance(i, (slice, int)) or i is Ellipsis for i in index)
    )

    def grad_fn(g):
        full = np.zeros(shape)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _node(a.value[index], (a,), grad_fn)


def reshape(a, shape: tuple) -> Var:
    a = as_var(a)
    orig = a.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),))


# backward pass --------------------------------------------------------------------

def _topo_order(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.needs_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(loss: Var, wrt: Iterable[Var]) -> list[np.ndarray]:
    """Return d(loss)/d(x) for each ``x`` in ``wrt``.

    Nodes not connected to ``loss`` get an all-zero gradient. The graph is
    left untouched, so calling this twice gives identical results.
    """
    if not isinstance(loss, Var) or loss.value.size != 1 or loss.ndim > 1:
        raise ValueError("backward needs a scalar loss")
    wrt = list(wrt)
    grads: dict[int, np.ndarray] = {}
    if loss.needs_grad:
        grads[id(loss)] = np.ones_like(loss.value)
        keep = {id(x) for x in wrt}
        for node in reversed(_topo_order(loss)):
            if node.grad_fn is None:
                continue
            g = grads.get(id(node)) if id(node) in keep else grads.pop(id(node), None)
            if g is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                if pg is None or not parent.needs_grad:
                    continue
                key = id(parent)
                # never accumulate in place: pg may alias an operand or be a broadcast view
                grads[key] = grads[key] + pg if key in grads else pg
    return [np.array(grads[id(x)]) if id(x) in grads else np.zeros_like(x.value) for x in wrt]


# parameters -------------------------------------------------------------------------

@dataclass
class ParamVector:
    """Flat float64 parameter array with named, shaped slices."""

    values: np.ndarray
    layout: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.layout:
            total = sum(int(np.prod(s)) for s in self.layout.values())
            if total != self.values.size:
                raise ValueError(f"layout covers {total} values, vector has {self.values.size}")
        else:
            self.layout = {"values": (self.values.size,)}

    def __len__(self) -> int:
        return self.values.size

    def offsets(self) -> dict[str, tuple[int, int]]:
        out, start = {}, 0
        for name, shape in self.layout.items():
            n = int(np.prod(shape))
            out[name] = (start, start + n)
            start += n
        return out

    def get(self, name: str) -> np.ndarray:
        lo, hi = self.offsets()[name]
        return self.values[lo:hi].reshape(self.layout[name])

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(np.array(values, dtype=np.float64), dict(self.layout))

    def copy(self) -> "ParamVector":
        return self.with_values(self.values)

    def traced(self, needs_grad: bool = True) -> "TracedParams":
        return TracedParams(self, leaf(self.values, needs_grad))


class TracedParams:
    """A ParamVector lifted into the graph; slices come out as shaped Vars."""

    def __init__(self, params: ParamVector, flat: Var):
        self.params = params
        self.flat = flat
        self._offsets = params.offsets()
        self._cache: dict[str, Var] = {}

    def __getitem__(self, name: str) -> Var:
        if name not in self._cache:
            lo, hi = self._offsets[name]
            self._cache[name] = reshape(getitem(self.flat, slice(lo, hi)), self.params.layout[name])
        return self._cache[name]


def backward(loss: Var, params: TracedParams) -> ParamVector:
    """Gradient of ``loss`` with respect to every entry of ``params``."""
    (g,) = gradients(loss, [params.flat])
    return params.params.with_values(g)


def finite_difference_check(
    f: Callable[[TracedParams], Var], params: ParamVector, step: float = 1e-6
) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``f`` maps traced parameters to a scalar Var. The relative error of each
    entry is ``|a - c| / max(|a|, |c|, 1e-8)``.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    tp = params.traced()
    analytic = backward(f(tp), tp).values
    base = params.values
    worst = 0.0
    for i in range(base.size):
        hi = base.copy()
        lo = base.copy()
        hi[i] += step
        lo[i] -= step
        f_hi = float(f(params.with_values(hi).traced(False)).value)
        f_lo = float(f(params.with_values(lo).traced(False)).value)
        central = (f_hi - f_lo) / (2.0 * step)
        a = analytic[i]
        err = abs(a - central) / max(abs(a), abs(central), 1e-8)
        worst = max(worst, err)
    return worst
