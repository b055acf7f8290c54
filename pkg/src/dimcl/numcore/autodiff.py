"""Tape-based reverse-mode differentiation over numpy arrays.

Only the primitives the losses and the desk-scale encoders need are
provided. Nodes are appended to the tape in evaluation order, so the tape
itself is a topological order and ``backward`` is a single reverse sweep.

    tape = Tape()
    w = tape.leaf(np.ones((3, 2)), "w")
    loss = sum_(relu(x @ w))
    grads = tape.backward(loss)     # {"w": array of shape (3, 2)}
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Var:
    __slots__ = ("value", "tape", "parents", "grad_fn", "requires_grad", "index", "name")

    def __init__(self, value, tape, parents=(), grad_fn=None, requires_grad=False, name=None):
        self.value = value
        self.tape = tape
        self.parents = parents
        self.grad_fn = grad_fn
        self.requires_grad = requires_grad
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self):
        return transpose(self)

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
        if not np.isscalar(other):
            raise TypeError("division is only supported by a scalar constant")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.shape}, name={self.name!r}, grad={self.requires_grad})"


class Tape:
    """The differentiation graph: an append-only list of ``Var`` nodes."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._names: set[str] = set()

    def leaf(self, value, name: Optional[str] = None) -> Var:
        if name is not None:
            if name in self._names:
                raise ValueError(f"duplicate leaf name {name!r}")
            self._names.add(name)
        return Var(np.asarray(value), self, requires_grad=True, name=name)

    def constant(self, value) -> Var:
        return Var(np.asarray(value), self)

    def record(self, value, parents: Sequence[Var], grad_fn: Callable) -> Var:
        needs = any(p.requires_grad for p in parents)
        return Var(value, self, tuple(parents), grad_fn if needs else None, needs)

    def leaves(self) -> list[Var]:
        return [n for n in self.nodes if n.requires_grad and not n.parents]

    def backward(self, output: Var) -> dict:
        """Gradient of scalar ``output`` w.r.t. every leaf, keyed by name (or index)."""
        if output.tape is not self:
            raise ValueError("output belongs to a different tape")
        if output.value.size != 1:
            raise ValueError(f"backward needs a scalar output, got shape {output.shape}")
        grads: dict[int, np.ndarray] = {output.index: np.ones_like(output.value)}
        for node in reversed(self.nodes[: output.index + 1]):
            g = grads.pop(node.index, None) if node.parents else grads.get(node.index)
            if g is None or node.grad_fn is None:
                continue
            for parent, pg in zip(node.parents, node.grad_fn(g)):
                assert parent.index < node.index, "tape is not topologically ordered"
                if pg is None or not parent.requires_grad:
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        out = {}
        for leaf in self.leaves():
            g = grads.get(leaf.index)
            out[leaf.name if leaf.name is not None else leaf.index] = (
                np.zeros_like(leaf.value) if g is None else g
            )
        return out


def backward(tape: Tape, output: Var) -> dict:
    return tape.backward(output)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _lift(tape: Tape, x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.constant(x)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t.record(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t.record(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)),
    )


def mul(a, b) -> Var:
    if np.isscalar(b) and isinstance(a, Var):
        c = b
        return a.tape.record(a.value * c, (a,), lambda g: (g * c,))
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    return t.record(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def matmul(a, b) -> Var:
    t = _tape_of(a, b)
    a, b = _lift(t, a), _lift(t, b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ValueError("matmul is defined for 2-D operands only")
    return t.record(a.value @ b.value, (a, b), lambda g: (g @ b.value.T, a.value.T @ g))


def transpose(a: Var) -> Var:
    return a.tape.record(a.value.T, (a,), lambda g: (g.T,))


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return a.tape.record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def relu(a: Var) -> Var:
    mask = a.value > 0
    return a.tape.record(a.value * mask, (a,), lambda g: (g * mask,))


def absolute(a: Var) -> Var:
    s = np.sign(a.value)
    return a.tape.record(np.abs(a.value), (a,), lambda g: (g * s,))


def stop_gradient(a: Var) -> Var:
    return a.tape.constant(a.value)


def sum_(a: Var, axis=None) -> Var:
    shape = a.shape

    def grad(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return a.tape.record(np.sum(a.value, axis=axis), (a,), grad)


def mean(a: Var, axis=None) -> Var:
    n = a.value.size if axis is None else a.shape[axis]
    return mul(sum_(a, axis), 1.0 / n)


def diagonal(a: Var) -> Var:
    n = min(a.shape)

    def grad(g):
        out = np.zeros_like(a.value)
        out[np.arange(n), np.arange(n)] = g
        return (out,)

    return a.tape.record(np.diagonal(a.value).copy(), (a,), grad)


def concat(xs: Sequence[Var], axis: int = 0) -> Var:
    t = _tape_of(*xs)
    xs = [_lift(t, x) for x in xs]
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]
    return t.record(
        np.concatenate([x.value for x in xs], axis=axis),
        xs,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def l2_normalize(a: Var, axis: str = "rows", eps: float = 1e-12) -> Var:
    """Differentiable counterpart of ``numcore.ops.l2_normalize``."""
    ax = {"rows": 1, "cols": 0}[axis]
    x = a.value
    n = np.sqrt(np.sum(x * x, axis=ax, keepdims=True))
    small = n < eps
    d = np.maximum(n, eps)
    y = x / d

    def grad(g):
        proj = np.where(small, 0.0, np.sum(g * y, axis=ax, keepdims=True))
        return ((g - y * proj) / d,)

    return a.tape.record(y, (a,), grad)


def logsumexp(a: Var, axis: int = 1, mask: Optional[np.ndarray] = None) -> Var:
    """Row- or column-wise log-sum-exp; entries where ``mask`` is False are excluded."""
    x = a.value
    if mask is None:
        m = np.max(x, axis=axis, keepdims=True)
        e = np.exp(x - m)
    else:
        m = np.max(np.where(mask, x, -np.inf), axis=axis, keepdims=True)
        e = np.where(mask, np.exp(np.where(mask, x, m) - m), 0.0)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + m, axis=axis)
    p = e / s

    return a.tape.record(out, (a,), lambda g: (np.expand_dims(g, axis) * p,))


def batch_norm(a: Var, eps: float = 1e-5) -> Var:
    """Standardize each column with the batch mean and (biased) variance."""
    x = a.value
    n = x.shape[0]
    mu = x.mean(axis=0)
    inv = 1.0 / np.sqrt(x.var(axis=0) + eps)
    xhat = (x - mu) * inv

    def grad(g):
        gs = g.sum(axis=0)
        gx = (g * xhat).sum(axis=0)
        return ((inv / n) * (n * g - gs - xhat * gx),)

    return a.tape.record(xhat, (a,), grad)


def softmax_cross_entropy(logits: Var, labels: np.ndarray) -> Var:
    """Mean cross-entropy of integer ``labels`` under row-softmax of ``logits``."""
    x = logits.value
    n = x.shape[0]
    z = x - x.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def grad(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d / n,)

    return logits.tape.record(np.asarray(loss, dtype=x.dtype), (logits,), grad)


def _pad_hw(x, p):
    return np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x


def conv2d(x: Var, w: Var, padding: int = 1) -> Var:
    """Stride-1 convolution. ``x`` is NHWC, ``w`` is (kh, kw, Cin, Cout)."""
    t = _tape_of(x, w)
    x, w = _lift(t, x), _lift(t, w)
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    xp = _pad_hw(x.value, padding)
    # windows: (N, Ho, Wo, Cin, kh, kw) -> (N*Ho*Wo, kh*kw*Cin) ordered like w
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kh * kw * cin)
    w2 = w.value.reshape(kh * kw * cin, cout)
    out = (cols @ w2).reshape(n, ho, wo, cout)

    def grad(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (cols.T @ g2).reshape(w.shape)
        gcols = (g2 @ w2.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i : i + ho, j : j + wo, :] += gcols[:, :, :, i, j, :]
        gx = gxp[:, padding : padding + h, padding : padding + wd, :] if padding else gxp
        return gx, gw

    return t.record(out, (x, w), grad)


def avg_pool2(x: Var) -> Var:
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ValueError("avg_pool2 needs even spatial dims")
    out = x.value.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))

    def grad(g):
        return (np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25,)

    return x.tape.record(out, (x,), grad)


def global_avg_pool(x: Var) -> Var:
    n, h, w, c = x.shape

    def grad(g):
        return (np.broadcast_to(g[:, None, None, :] / (h * w), x.shape).copy(),)

    return x.tape.record(x.value.mean(axis=(1, 2)), (x,), grad)
