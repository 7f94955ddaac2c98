"""Dense float64 arithmetic, attention primitives and a reverse-mode tape.

Every operation accepts plain ``numpy`` arrays or :class:`Var` nodes. With
only arrays as inputs the result is a plain array and nothing is recorded;
as soon as one input is a ``Var`` the result is a ``Var`` and, when a
:class:`Tape` is active, the operation is appended to it. Inference and
training therefore run the exact same arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ParameterError

DTYPE = np.float64

_TAPES: list["Tape"] = []


class Var:
    """A node in the computation graph wrapping a float64 array."""

    __slots__ = ("data", "grad", "_parents", "_backward")
    # ndarray <op> Var must dispatch to Var's reflected operators
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Var(shape={self.data.shape})"

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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


class Tape:
    """Records operations in creation order; one tape per training step.

    Use as a context manager::

        with Tape() as tape:
            w = tape.watch(weights)
            loss = square(x @ w).sum()
            tape.backward(loss)
        w.grad
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    @staticmethod
    def watch(array) -> Var:
        return Var(np.array(array, dtype=DTYPE))

    def backward(self, out: Var) -> None:
        if not isinstance(out, Var) or out.data.size != 1:
            raise DimensionError("backward needs a scalar Var output")
        out.grad = np.ones_like(out.data)
        for node in reversed(self.nodes):
            if node.grad is not None and node._backward is not None:
                node._backward(node.grad)


def _val(x) -> np.ndarray:
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=DTYPE)


def _send(target, g) -> None:
    if not isinstance(target, Var):
        return
    if target.grad is None:
        target.grad = np.array(g, dtype=DTYPE)
    else:
        target.grad = target.grad + g


def _record(value, parents, backward):
    if not any(isinstance(p, Var) for p in parents):
        return value
    out = Var(value)
    if _TAPES:
        out._parents = parents
        out._backward = backward
        _TAPES[-1].nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _swap(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


# -- elementwise ---------------------------------------------------------------


def add(a, b):
    av, bv = _val(a), _val(b)

    def bw(g):
        _send(a, _unbroadcast(g, av.shape))
        _send(b, _unbroadcast(g, bv.shape))

    return _record(av + bv, (a, b), bw)


def sub(a, b):
    av, bv = _val(a), _val(b)

    def bw(g):
        _send(a, _unbroadcast(g, av.shape))
        _send(b, _unbroadcast(-g, bv.shape))

    return _record(av - bv, (a, b), bw)


def mul(a, b):
    av, bv = _val(a), _val(b)

    def bw(g):
        _send(a, _unbroadcast(g * bv, av.shape))
        _send(b, _unbroadcast(g * av, bv.shape))

    return _record(av * bv, (a, b), bw)


def div(a, b):
    av, bv = _val(a), _val(b)

    def bw(g):
        _send(a, _unbroadcast(g / bv, av.shape))
        _send(b, _unbroadcast(-g * av / (bv * bv), bv.shape))

    return _record(av / bv, (a, b), bw)


def silu(x):
    xv = _val(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * xv))

    def bw(g):
        _send(x, g * s * (1.0 + xv * (1.0 - s)))

    return _record(xv * s, (x,), bw)


def square(x):
    return mul(x, x)


# -- shape manipulation ----------------------------------------------------------


def reshape(x, shape):
    xv = _val(x)

    def bw(g):
        _send(x, g.reshape(xv.shape))

    return _record(xv.reshape(shape), (x,), bw)


def transpose(x, axes):
    xv = _val(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def bw(g):
        _send(x, g.transpose(inverse))

    return _record(xv.transpose(axes), (x,), bw)


def swap_last(x):
    xv = _val(x)

    def bw(g):
        _send(x, _swap(g))

    return _record(_swap(xv), (x,), bw)


def getitem(x, idx):
    xv = _val(x)

    def bw(g):
        full = np.zeros_like(xv)
        np.add.at(full, idx, g)
        _send(x, full)

    return _record(xv[idx], (x,), bw)


def concat(xs: Sequence, axis: int = 0):
    vals = [_val(x) for x in xs]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        for x, piece in zip(xs, np.split(g, bounds, axis=axis)):
            _send(x, piece)

    return _record(out, tuple(xs), bw)


def sum_(x, axis=None, keepdims=False):
    xv = _val(x)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _send(x, np.broadcast_to(g, xv.shape))

    return _record(xv.sum(axis=axis, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims=False):
    xv = _val(x)
    if axis is None:
        count = xv.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = math.prod(xv.shape[a] for a in axes)
    return mul(sum_(x, axis, keepdims), 1.0 / count)


# -- linear algebra and attention -------------------------------------------------


def matmul(a, b):
    """Batched matrix product over the last two axes."""
    av, bv = _val(a), _val(b)
    if av.ndim < 2 or bv.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise DimensionError(f"inner extents differ: {av.shape} @ {bv.shape}")
    try:
        out = np.matmul(av, bv)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None

    def bw(g):
        _send(a, _unbroadcast(np.matmul(g, _swap(bv)), av.shape))
        _send(b, _unbroadcast(np.matmul(_swap(av), g), bv.shape))

    return _record(out, (a, b), bw)


def softmax_lastdim(x):
    xv = _val(x)
    if xv.ndim == 0 or xv.size == 0:
        raise DimensionError("softmax needs a non-empty last axis")
    e = np.exp(xv - xv.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        _send(x, y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return _record(y, (x,), bw)


def scaled_dot_attention(q, k, v):
    """softmax(q k^T / sqrt(d)) v over the last two axes, with batch broadcasting."""
    qs, ks, vs = _val(q).shape, _val(k).shape, _val(v).shape
    if len(qs) < 2 or len(ks) < 2 or len(vs) < 2:
        raise DimensionError("attention operands must be at least 2-D")
    if qs[-1] != ks[-1]:
        raise DimensionError(f"query/key feature extents differ: {qs[-1]} vs {ks[-1]}")
    if ks[-2] != vs[-2]:
        raise DimensionError(f"key/value lengths differ: {ks[-2]} vs {vs[-2]}")
    scores = mul(matmul(q, swap_last(k)), 1.0 / math.sqrt(qs[-1]))
    return matmul(softmax_lastdim(scores), v)


# -- convolution and resampling ---------------------------------------------------


def conv2d_3x3(x, w, b):
    """3x3 cross-correlation, zero padding 1, stride 1.

    ``x`` is ``(C_in, H, W)`` or batched ``(N, C_in, H, W)``; ``w`` is
    ``(C_out, C_in, 3, 3)`` and ``b`` is ``(C_out,)``.
    """
    xv, wv, bv = _val(x), _val(w), _val(b)
    single = xv.ndim == 3
    if single:
        xv = xv[None]
    if xv.ndim != 4 or wv.ndim != 4 or wv.shape[2:] != (3, 3):
        raise DimensionError(f"bad conv shapes: x {xv.shape}, w {wv.shape}")
    n, cin, h, wd = xv.shape
    cout = wv.shape[0]
    if wv.shape[1] != cin:
        raise DimensionError(f"conv expects {wv.shape[1]} input channels, got {cin}")
    if bv.shape != (cout,):
        raise DimensionError(f"bias shape {bv.shape} != ({cout},)")
    xp = np.pad(xv, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.stack(
        [xp[:, :, dy : dy + h, dx : dx + wd] for dy in range(3) for dx in range(3)],
        axis=2,
    ).reshape(n, cin * 9, h * wd)
    w2 = wv.reshape(cout, cin * 9)
    out = (np.matmul(w2, cols) + bv[:, None]).reshape(n, cout, h, wd)

    def bw(g):
        g2 = g.reshape(n, cout, h * wd)
        _send(w, np.matmul(g2, _swap(cols)).sum(axis=0).reshape(wv.shape))
        _send(b, g2.sum(axis=(0, 2)))
        if isinstance(x, Var):
            gcols = np.matmul(w2.T, g2).reshape(n, cin, 9, h, wd)
            gxp = np.zeros((n, cin, h + 2, wd + 2))
            for k in range(9):
                dy, dx = divmod(k, 3)
                gxp[:, :, dy : dy + h, dx : dx + wd] += gcols[:, :, k]
            gx = gxp[:, :, 1:-1, 1:-1]
            _send(x, gx[0] if single else gx)

    return _record(out[0] if single else out, (x, w, b), bw)


def avg_pool2(x):
    """2x2 mean pooling over the last two axes."""
    xv = _val(x)
    h, w = xv.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2 needs even extents, got {h}x{w}")
    lead = xv.shape[:-2]
    out = xv.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))

    def bw(g):
        up = np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)
        _send(x, up * 0.25)

    return _record(out, (x,), bw)


def upsample2(x):
    """Nearest-neighbour 2x upsampling over the last two axes."""
    xv = _val(x)
    h, w = xv.shape[-2:]
    lead = xv.shape[:-2]
    out = np.repeat(np.repeat(xv, 2, axis=-2), 2, axis=-1)

    def bw(g):
        _send(x, g.reshape(*lead, h, 2, w, 2).sum(axis=(-3, -1)))

    return _record(out, (x,), bw)


# -- gradient utilities -----------------------------------------------------------


def value_and_grad(fn: Callable, *arrays):
    """Evaluate scalar ``fn`` on ``arrays`` and return ``(value, grads)``.

    An output that never touched the inputs gets all-zero gradients.
    """
    with Tape() as tape:
        leaves = [tape.watch(a) for a in arrays]
        out = fn(*leaves)
        if not isinstance(out, Var):
            return float(out), [np.zeros_like(l.data) for l in leaves]
        tape.backward(out)
    grads = [l.grad if l.grad is not None else np.zeros_like(l.data) for l in leaves]
    return float(out.data), grads


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    analytic: float
    numeric: float


def grad_check(f: Callable[[np.ndarray], float], x, analytic_grad, eps: float = 1e-5) -> GradCheckReport:
    """Compare ``analytic_grad`` with central differences of ``f`` at ``x``.

    Relative error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    x = np.array(x, dtype=DTYPE)
    analytic_grad = np.asarray(analytic_grad, dtype=DTYPE)
    if analytic_grad.shape != x.shape:
        raise DimensionError(f"gradient shape {analytic_grad.shape} != {x.shape}")
    worst = GradCheckReport(0.0, 0, 0.0, 0.0)
    probe = x.copy()
    for i in range(x.size):
        orig = probe.flat[i]
        probe.flat[i] = orig + eps
        fp = f(probe)
        probe.flat[i] = orig - eps
        fm = f(probe)
        probe.flat[i] = orig
        num = (fp - fm) / (2.0 * eps)
        ana = float(analytic_grad.flat[i])
        rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
        if i == 0 or rel > worst.max_rel_error:
            worst = GradCheckReport(rel, i, ana, num)
    return worst
