"""Minimal reverse-mode automatic differentiation on numpy arrays.

The graph is a tape of array-valued nodes (`Var`). Operations accept either
plain ndarrays (treated as constants, no gradient tracked) or `Var` instances;
they return a `Var` whenever at least one operand is a `Var`, otherwise a plain
ndarray. This lets the same model code run in a fast "no-grad" mode and in a
taped training mode.

Gradients are accumulated by `backward(root)` for a scalar (or any-shape) root;
after the call every upstream `Var` holds d(root)/d(var) in `.grad`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NumericalError(RuntimeError):
    """A non-finite value surfaced inside a numerical computation."""


def value_of(x):
    """Underlying ndarray of `x`, whether it is a Var or already an array."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=float)


def _unbroadcast(g, shape):
    # reduce a broadcast gradient back to the operand's shape
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Var:
    """Array-valued node of the reverse-mode tape."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, other):
        if isinstance(other, Var):
            raise TypeError("Var/Var division is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / np.asarray(other, dtype=float))


def _accum(var, g):
    # first contribution may alias `g`; later ones allocate, so the alias is
    # never mutated
    if var.grad is None:
        var.grad = g
    else:
        var.grad = var.grad + g


def _binary(a, b, value, da, db):
    parents = tuple(x for x in (a, b) if isinstance(x, Var))
    if not parents:
        return value
    out = Var(value, parents)

    def back():
        g = out.grad
        if isinstance(a, Var):
            _accum(a, _unbroadcast(da(g), a.value.shape))
        if isinstance(b, Var):
            _accum(b, _unbroadcast(db(g), b.value.shape))

    out._backward = back
    return out


def add(a, b):
    av, bv = value_of(a), value_of(b)
    return _binary(a, b, av + bv, lambda g: g, lambda g: g)


def mul(a, b):
    av, bv = value_of(a), value_of(b)
    return _binary(a, b, av * bv, lambda g: g * bv, lambda g: g * av)


def affine(x, w, b):
    """x @ w.T + b for a batch `x` of shape (n, d_in), weights (d_out, d_in)."""
    xv, wv, bv = value_of(x), value_of(w), value_of(b)
    value = xv @ wv.T + bv
    parents = tuple(p for p in (x, w, b) if isinstance(p, Var))
    if not parents:
        return value
    out = Var(value, parents)

    def back():
        g = out.grad
        if isinstance(x, Var):
            _accum(x, g @ wv)
        if isinstance(w, Var):
            _accum(w, g.T @ xv)
        if isinstance(b, Var):
            _accum(b, g.sum(axis=0))

    out._backward = back
    return out


def _sigmoid(z):
    # one exp, no overflow for any finite z
    e = np.exp(-np.abs(z))
    return np.where(z >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def swish(x):
    """z * sigmoid(z), the smooth hidden-layer activation."""
    xv = value_of(x)
    s = _sigmoid(xv)
    value = xv * s
    if not isinstance(x, Var):
        return value
    out = Var(value, (x,))

    def back():
        _accum(x, out.grad * (s * (1.0 + xv * (1.0 - s))))

    out._backward = back
    return out


def tanh(x):
    xv = value_of(x)
    t = np.tanh(xv)
    if not isinstance(x, Var):
        return t
    out = Var(t, (x,))

    def back():
        _accum(x, out.grad * (1.0 - t * t))

    out._backward = back
    return out


def exp(x):
    xv = value_of(x)
    e = np.exp(xv)
    if not isinstance(x, Var):
        return e
    out = Var(e, (x,))

    def back():
        _accum(x, out.grad * e)

    out._backward = back
    return out


def absolute(x):
    xv = value_of(x)
    value = np.abs(xv)
    if not isinstance(x, Var):
        return value
    out = Var(value, (x,))

    def back():
        _accum(x, out.grad * np.sign(xv))

    out._backward = back
    return out


def vsum(x, axis=None):
    xv = value_of(x)
    value = xv.sum(axis=axis)
    if not isinstance(x, Var):
        return value
    out = Var(value, (x,))

    def back():
        g = np.asarray(out.grad)
        if axis is not None:
            g = np.expand_dims(g, axis)
        _accum(x, np.broadcast_to(g, xv.shape))

    out._backward = back
    return out


def vmean(x, axis=None):
    xv = value_of(x)
    n = xv.size if axis is None else xv.shape[axis]
    return mul(vsum(x, axis=axis), 1.0 / n)


def where(cond, a, b):
    """Select `a` where `cond` else `b`; gradient flows only into the
    selected branch. `cond` is a plain boolean array."""
    cond = np.asarray(cond, dtype=bool)
    av, bv = value_of(a), value_of(b)
    value = np.where(cond, av, bv)
    return _binary(a, b, value,
                   lambda g: np.where(cond, g, 0.0),
                   lambda g: np.where(cond, 0.0, g))


def backward(root):
    """Reverse-accumulate gradients of `root` through the tape.

    Seeds d(root)/d(root) = 1 (elementwise for non-scalar roots).
    """
    order = []
    seen = set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward()


# -- Adam on a flat parameter vector ----------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(m=np.zeros(n), v=np.zeros(n), step=0)


def adam_step(theta, grad, state, *, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, in place on `theta`.

    `theta` and `grad` are flat (n,) arrays; `state` is mutated and returned.
    """
    if theta.shape != grad.shape or theta.shape != state.m.shape:
        raise ValueError(
            f"shape mismatch: theta {theta.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    t = state.step
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * (grad * grad)
    mhat = state.m / (1.0 - beta1 ** t)
    vhat = state.v / (1.0 - beta2 ** t)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)
    return theta, state


def flatten_arrays(arrays):
    """Copy a list of arrays into one flat buffer; return (flat, aligned views).

    The views share memory with `flat`, so in-place optimizer updates on the
    flat buffer propagate to the per-layer arrays.
    """
    sizes = [a.size for a in arrays]
    flat = np.empty(sum(sizes))
    views = []
    off = 0
    for a in arrays:
        flat[off:off + a.size] = a.ravel()
        views.append(flat[off:off + a.size].reshape(a.shape))
        off += a.size
    return flat, views


def gather_grads(leaves, out):
    """Write the gradients of leaf Vars into the flat buffer `out`."""
    off = 0
    for leaf in leaves:
        n = leaf.value.size
        if leaf.grad is None:
            out[off:off + n] = 0.0
        else:
            out[off:off + n] = np.asarray(leaf.grad).ravel()
        off += n
    return out
