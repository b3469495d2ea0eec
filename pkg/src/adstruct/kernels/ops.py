"""Differentiable primitives recorded on a :class:`~adstruct.kernels.graph.Graph`.

Every op accepts ``Var`` handles (or raw arrays, lifted to constants on the
graph of the first ``Var`` argument) and returns a ``Var``.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigurationError, DimensionError
from . import backend
from .graph import Graph, Var

EPS = 1e-7


def _graph_of(*xs) -> Graph:
    for x in xs:
        if isinstance(x, Var):
            return x.graph
    raise TypeError("at least one argument must be a Var")


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise / structural ------------------------------------------------

def add(a, b) -> Var:
    g = _graph_of(a, b)
    a, b = g.lift(a), g.lift(b)
    sa, sb = a.shape, b.shape
    return g.record("add", (a, b), a.value + b.value,
                    lambda gy: (_unbroadcast(gy, sa), _unbroadcast(gy, sb)))


def mul(a, b) -> Var:
    g = _graph_of(a, b)
    a, b = g.lift(a), g.lift(b)
    va, vb = a.value, b.value
    return g.record("mul", (a, b), va * vb,
                    lambda gy: (_unbroadcast(gy * vb, va.shape),
                                _unbroadcast(gy * va, vb.shape)))


def scale(x: Var, c: float) -> Var:
    c = float(c)
    return x.graph.record("scale", (x,), x.value * c, lambda gy: (gy * c,))


def reshape(x: Var, shape) -> Var:
    old = x.shape
    return x.graph.record("reshape", (x,), x.value.reshape(shape),
                          lambda gy: (gy.reshape(old),))


def concat(xs, axis=-1) -> Var:
    g = _graph_of(*xs)
    xs = [g.lift(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(gy):
        return tuple(np.split(gy, splits, axis=axis))

    return g.record("concat", xs, np.concatenate([x.value for x in xs], axis=axis), bw)


def sum_(x: Var, axis=None) -> Var:
    shape = x.shape

    def bw(gy):
        if axis is None:
            return (np.broadcast_to(gy, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(gy, axis), shape).copy(),)

    return x.graph.record("sum", (x,), np.sum(x.value, axis=axis), bw)


def mean(x: Var) -> Var:
    return scale(sum_(x), 1.0 / max(x.value.size, 1))


def gather_rows(table: Var, ids) -> Var:
    ids = np.asarray(ids, dtype=np.int64)
    shape = table.shape

    def bw(gy):
        gt = np.zeros(shape)
        np.add.at(gt, ids, gy)
        return (gt,)

    return table.graph.record("gather_rows", (table,), table.value[ids], bw)


# -- linear -----------------------------------------------------------------

def matmul(a, b) -> Var:
    g = _graph_of(a, b)
    a, b = g.lift(a), g.lift(b)
    va, vb = a.value, b.value
    if va.shape[-1] != vb.shape[0] or vb.ndim != 2:
        raise DimensionError(f"matmul shapes {va.shape} and {vb.shape} do not agree")

    def bw(gy):
        ga = gy @ vb.T
        gb = va.reshape(-1, va.shape[-1]).T @ gy.reshape(-1, vb.shape[1])
        return ga, gb

    return g.record("matmul", (a, b), va @ vb, bw)


def dense(x, W, b) -> Var:
    """``x @ W + b`` over the last axis of ``x``."""
    g = _graph_of(x, W, b)
    x, W, b = g.lift(x), g.lift(W), g.lift(b)
    if W.value.ndim != 2 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"dense: input shape {x.shape} incompatible with weight shape {W.shape}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"dense: bias shape {b.shape} incompatible with weight shape {W.shape}")
    return add(matmul(x, W), b)


def conv1d_dilated(x, kernel, dilation: int, bias=None) -> Var:
    """Same-length dilated 1-D convolution over time.

    ``x`` is ``[T, C_in]`` and ``kernel`` is ``[k, C_in, C_out]`` with odd
    ``k``; out-of-range inputs count as zero.
    """
    g = _graph_of(x, kernel, bias)
    x, kernel = g.lift(x), g.lift(kernel)
    if int(dilation) != dilation or dilation < 1:
        raise ConfigurationError(f"dilation must be a positive integer, got {dilation}")
    dilation = int(dilation)
    kv = kernel.value
    if kv.ndim != 3:
        raise DimensionError(f"conv kernel must be [k, C_in, C_out], got {kv.shape}")
    if kv.shape[0] % 2 == 0:
        raise ConfigurationError(f"conv kernel size must be odd, got {kv.shape[0]}")
    xv = x.value
    if xv.ndim != 2 or xv.shape[1] != kv.shape[1]:
        raise DimensionError(f"conv input shape {xv.shape} incompatible with kernel shape {kv.shape}")
    xc = np.ascontiguousarray(xv)
    kc = np.ascontiguousarray(kv)
    y = backend.conv1d_forward(xc, kc, dilation)

    def bw(gy):
        return backend.conv1d_backward(xc, kc, dilation, np.ascontiguousarray(gy))

    out = g.record("conv1d", (x, kernel), np.asarray(y), bw)
    if bias is not None:
        out = add(out, bias)
    return out


# -- activations ------------------------------------------------------------

def _sigmoid_np(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Var) -> Var:
    s = _sigmoid_np(x.value)
    return x.graph.record("sigmoid", (x,), s, lambda gy: (gy * s * (1.0 - s),))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return x.graph.record("relu", (x,), np.where(mask, x.value, 0.0), lambda gy: (gy * mask,))


def _softmax_np(z, mask=None):
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    m = np.max(z, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(z - m)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_rows(x: Var, mask=None) -> Var:
    """Softmax over the last axis; ``mask`` (bool, True = keep) zeroes entries."""
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    s = _softmax_np(x.value, mask)

    def bw(gy):
        return (s * (gy - np.sum(gy * s, axis=-1, keepdims=True)),)

    return x.graph.record("softmax", (x,), s, bw)


def dropout(x: Var, rate: float, rng=None, training: bool = True) -> Var:
    """Inverted dropout; identity when ``training`` is false or ``rate`` is 0."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x.graph.record("dropout", (x,), x.value * keep, lambda gy: (gy * keep,))


# -- losses -----------------------------------------------------------------

def bce_terms(p, y, pos_weight=1.0):
    """Elementwise (weighted) binary cross-entropy, probabilities clamped."""
    pc = np.clip(p, EPS, 1.0 - EPS)
    return -(pos_weight * y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))


def focal_terms(p, y, gamma=2.0, alpha=0.25):
    pc = np.clip(p, EPS, 1.0 - EPS)
    pt = np.where(y > 0.5, pc, 1.0 - pc)
    at = np.where(y > 0.5, alpha, 1.0 - alpha)
    return -at * (1.0 - pt) ** gamma * np.log(pt)


def _reduce(g, terms_var, reduction):
    if reduction == "none":
        return terms_var
    if reduction == "sum":
        return sum_(terms_var)
    if reduction == "mean":
        return mean(terms_var)
    raise ConfigurationError(f"unknown reduction {reduction!r}")


def _check_loss_args(p, y):
    yv = np.asarray(y, dtype=np.float64)
    if yv.shape != p.shape:
        raise DimensionError(f"loss: probabilities {p.shape} vs targets {yv.shape}")
    return yv


def bce_loss(p: Var, y, pos_weight: float = 1.0, reduction: str = "mean") -> Var:
    yv = _check_loss_args(p, y)
    pv = p.value
    inside = (pv > EPS) & (pv < 1.0 - EPS)
    pc = np.clip(pv, EPS, 1.0 - EPS)
    w = float(pos_weight)

    def bw(gy):
        return (gy * inside * (-w * yv / pc + (1.0 - yv) / (1.0 - pc)),)

    terms = p.graph.record("bce", (p,), bce_terms(pv, yv, w), bw)
    return _reduce(p.graph, terms, reduction)


def focal_loss(p: Var, y, gamma: float = 2.0, alpha: float = 0.25,
               reduction: str = "mean") -> Var:
    if gamma < 0:
        raise ConfigurationError(f"focal gamma must be >= 0, got {gamma}")
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"focal alpha must be in (0, 1), got {alpha}")
    yv = _check_loss_args(p, y)
    pv = p.value
    inside = (pv > EPS) & (pv < 1.0 - EPS)
    pc = np.clip(pv, EPS, 1.0 - EPS)
    pos = yv > 0.5
    pt = np.where(pos, pc, 1.0 - pc)
    at = np.where(pos, alpha, 1.0 - alpha)
    sign = np.where(pos, 1.0, -1.0)

    def bw(gy):
        q = 1.0 - pt
        d_pt = -at * q ** gamma / pt
        if gamma > 0:
            d_pt = d_pt + at * gamma * q ** (gamma - 1.0) * np.log(pt)
        return (gy * inside * d_pt * sign,)

    terms = p.graph.record("focal", (p,), focal_terms(pv, yv, gamma, alpha), bw)
    return _reduce(p.graph, terms, reduction)


def stable_mean(arrays) -> np.ndarray:
    """Elementwise mean written as ``a0 + mean(a_i - a0)``.

    Identical members give back ``a0`` bit for bit, which a plain
    sum-then-divide does not guarantee (``(x + x + x) / 3 != x`` in general).
    """
    arrs = [np.asarray(a, dtype=np.float64) for a in arrays]
    base = arrs[0]
    if len(arrs) == 1:
        return base.copy()
    return base + np.mean(np.stack([a - base for a in arrs]), axis=0)
