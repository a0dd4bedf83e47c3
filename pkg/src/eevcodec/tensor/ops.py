"""Differentiable operators over :class:`Tensor`.

Every operator checks its forward output for NaN/Inf and, when a tape is
active, records a closure computing input gradients from the output
gradient. Broadcasting is limited to what numpy does for bias-style
(N, C, 1, 1) operands and python scalars.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import ndtr

from .core import ShapeError, Tensor, check_finite, record

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --------------------------------------------------------------------------
# conv tracing, used by complexity accounting tests

_trace: Optional[list] = None


@contextmanager
def trace_convolutions():
    """Collect (kind, k, cin, cout, stride, in_hw, out_hw) for every conv call."""
    global _trace
    prev, _trace = _trace, []
    try:
        yield _trace
    finally:
        _trace = prev


# --------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(check_finite(a.data + b.data, "add"))

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), out, bw)


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    out = Tensor(check_finite(a.data - b.data, "sub"))

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return record("sub", (a, b), out, bw)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor) and np.isscalar(b):
        a = _t(a)
        s = b
        out = Tensor(check_finite(a.data * np.asarray(s, dtype=a.dtype), "mul"))
        return record("scale", (a,), out, lambda g: (g * s,))
    a, b = _t(a), _t(b)
    out = Tensor(check_finite(a.data * b.data, "mul"))

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), out, bw)


def div(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if np.any(b.data == 0):
        raise ZeroDivisionError("div by a tensor containing zeros")
    out = Tensor(check_finite(a.data / b.data, "div"))

    def bw(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * a.data / (b.data * b.data), b.shape)

    return record("div", (a, b), out, bw)


def square(x: Tensor) -> Tensor:
    out = Tensor(check_finite(x.data * x.data, "square"))
    return record("square", (x,), out, lambda g: (2.0 * g * x.data,))


def exp(x: Tensor) -> Tensor:
    y = check_finite(np.exp(x.data), "exp")
    out = Tensor(y)
    return record("exp", (x,), out, lambda g: (g * y,))


def log(x: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(x.data)
    out = Tensor(check_finite(y, "log"))
    return record("log", (x,), out, lambda g: (g / x.data,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    mask = x.data >= floor
    out = Tensor(np.where(mask, x.data, np.asarray(floor, dtype=x.dtype)))
    return record("clamp_min", (x,), out, lambda g: (g * mask,))


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    mask = (x.data >= lo) & (x.data <= hi)
    out = Tensor(np.clip(x.data, lo, hi))
    return record("clip", (x,), out, lambda g: (g * mask,))


# --------------------------------------------------------------------------
# activations


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = Tensor(x.data * mask)
    return record("relu", (x,), out, lambda g: (g * mask,))


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    mask = x.data > 0
    factor = np.where(mask, 1.0, slope).astype(x.dtype)
    out = Tensor(x.data * factor)
    return record("leaky_relu", (x,), out, lambda g: (g * factor,))


def sigmoid(x: Tensor) -> Tensor:
    y = np.empty_like(x.data)
    pos = x.data >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ex = np.exp(x.data[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    return record("sigmoid", (x,), out, lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    return record("tanh", (x,), out, lambda g: (g * (1.0 - y * y),))


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(0.0, x.data).astype(x.dtype)
    out = Tensor(check_finite(y, "softplus"))
    s = sigmoid(Tensor(x.data)).data
    return record("softplus", (x,), out, lambda g: (g * s,))


def normal_cdf(x: Tensor) -> Tensor:
    y = ndtr(x.data).astype(x.dtype)
    out = Tensor(y)

    def bw(g):
        return (g * np.exp(-0.5 * x.data * x.data) / _SQRT_2PI,)

    return record("normal_cdf", (x,), out, bw)


# --------------------------------------------------------------------------
# reductions and reshaping


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = Tensor(check_finite(np.asarray(x.data.sum(dtype=x.dtype)), "sum"))
    return record("sum", (x,), out, lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = Tensor(check_finite(np.asarray(x.data.mean(dtype=x.dtype)), "mean"))
    return record("mean", (x,), out, lambda g: (np.broadcast_to(g / n, x.shape).astype(x.dtype),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = [_t(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bw(g):
        return tuple(np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return record("concat", tensors, out, bw)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[:, start:stop])

    def bw(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return record("slice_channels", (x,), out, bw)


# --------------------------------------------------------------------------
# pooling / resampling


def avg_pool2(x: Tensor) -> Tensor:
    """2x2 mean pooling with stride 2."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    y = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5), dtype=x.dtype)
    out = Tensor(y)

    def bw(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * x.dtype.type(0.25),)

    return record("avg_pool2", (x,), out, bw)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    out = Tensor(x.data.mean(axis=(2, 3), keepdims=True, dtype=x.dtype))

    def bw(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return record("global_avg_pool", (x,), out, bw)


def upsample_nearest2(x: Tensor) -> Tensor:
    y = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    out = Tensor(y)

    def bw(g):
        n, c, h, w = g.shape
        return (g.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5)),)

    return record("upsample_nearest2", (x,), out, bw)


def _lerp_up_axis(a: np.ndarray, axis: int) -> np.ndarray:
    # half-pixel-centred x2 linear upsampling with edge clamping
    n = a.shape[axis]
    idx = np.arange(n)
    prev = np.take(a, np.maximum(idx - 1, 0), axis=axis)
    nxt = np.take(a, np.minimum(idx + 1, n - 1), axis=axis)
    even = 0.75 * a + 0.25 * prev
    odd = 0.75 * a + 0.25 * nxt
    out = np.stack([even, odd], axis=axis + 1)
    shape = list(a.shape)
    shape[axis] = 2 * n
    return out.reshape(shape).astype(a.dtype)


def _lerp_up_axis_adjoint(g: np.ndarray, axis: int) -> np.ndarray:
    n = g.shape[axis] // 2
    shape = list(g.shape)
    shape[axis] = n
    shape.insert(axis + 1, 2)
    g2 = g.reshape(shape)
    even = np.take(g2, 0, axis=axis + 1)
    odd = np.take(g2, 1, axis=axis + 1)
    res = 0.75 * (even + odd)
    res = res.astype(g.dtype)
    idx = np.arange(n)
    # even[i] pulled 0.25 from a[max(i-1,0)]; odd[i] from a[min(i+1,n-1)]
    moved = np.moveaxis(res, axis, 0)
    np.add.at(moved, np.maximum(idx - 1, 0), 0.25 * np.moveaxis(even, axis, 0))
    np.add.at(moved, np.minimum(idx + 1, n - 1), 0.25 * np.moveaxis(odd, axis, 0))
    return res


def upsample_bilinear2(x: Tensor) -> Tensor:
    y = _lerp_up_axis(_lerp_up_axis(x.data, 2), 3)
    out = Tensor(y)

    def bw(g):
        return (_lerp_up_axis_adjoint(_lerp_up_axis_adjoint(g, 3), 2),)

    return record("upsample_bilinear2", (x,), out, bw)


def bilinear_warp(source: Tensor, flow: Tensor) -> Tensor:
    """Sample ``source`` at ``p + flow(p)`` with clamp-to-edge borders.

    ``flow`` is (N, 2, H, W) holding (dx, dy) in pixels.
    """
    n, c, h, w = source.shape
    if flow.shape != (n, 2, h, w):
        raise ShapeError(f"flow shape {flow.shape} does not match source {source.shape}")
    dt = source.data.dtype
    gy, gx = np.meshgrid(np.arange(h, dtype=dt), np.arange(w, dtype=dt), indexing="ij")
    px = gx[None] + flow.data[:, 0]
    py = gy[None] + flow.data[:, 1]
    x = np.clip(px, 0, w - 1)
    y = np.clip(py, 0, h - 1)
    x0 = np.floor(x)
    y0 = np.floor(y)
    wx = (x - x0).astype(dt)
    wy = (y - y0).astype(dt)
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)

    flat = source.data.reshape(n, c, h * w)
    bidx = np.arange(n)[:, None, None]
    cidx = np.arange(c)[None, :, None]

    def gather(yy, xx):
        return flat[bidx, cidx, (yy * w + xx).reshape(n, 1, h * w)].reshape(n, c, h, w)

    v00, v01 = gather(y0, x0), gather(y0, x1)
    v10, v11 = gather(y1, x0), gather(y1, x1)
    wx_, wy_ = wx[:, None], wy[:, None]
    top = (1 - wx_) * v00 + wx_ * v01
    bot = (1 - wx_) * v10 + wx_ * v11
    out = Tensor(check_finite((1 - wy_) * top + wy_ * bot, "bilinear_warp"))

    def bw(g):
        g_src = None
        if source.requires_grad:
            base = (np.arange(n * c) * (h * w)).reshape(n, c, 1)
            idx, vals = [], []
            for yy, xx, wt in ((y0, x0, (1 - wy) * (1 - wx)), (y0, x1, (1 - wy) * wx),
                               (y1, x0, wy * (1 - wx)), (y1, x1, wy * wx)):
                idx.append((base + (yy * w + xx).reshape(n, 1, h * w)).ravel())
                vals.append((g * wt[:, None]).reshape(n, c, h * w).ravel())
            g_src = np.bincount(np.concatenate(idx), weights=np.concatenate(vals),
                                minlength=n * c * h * w).reshape(n, c, h, w).astype(dt)
        g_flow = None
        if flow.requires_grad:
            inside_x = (px > 0) & (px < w - 1)
            inside_y = (py > 0) & (py < h - 1)
            dx = ((1 - wy_) * (v01 - v00) + wy_ * (v11 - v10)) * g
            dy = (bot - top) * g
            g_flow = np.stack([dx.sum(axis=1) * inside_x, dy.sum(axis=1) * inside_y], axis=1).astype(dt)
        return g_src, g_flow

    return record("bilinear_warp", (source, flow), out, bw)


# --------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: int, stride: int):
    n, c = xp.shape[:2]
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
    return cols, ho, wo


def _col2im(dcols_t: np.ndarray, padded_shape: tuple, k: int, stride: int, ho: int, wo: int):
    """Scatter-add columns laid out as (C*k*k, N*ho*wo) back into (N, C, Hp, Wp)."""
    n, c, hp, wp = padded_shape
    out = np.zeros((c, n, hp, wp), dtype=dcols_t.dtype)
    d = dcols_t.reshape(c, k, k, n, ho, wo)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, i, j]
    return out.transpose(1, 0, 2, 3)


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _conv_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int):
    cout, cin, k, _ = w.shape
    cols, ho, wo = _im2col(_pad(x, padding), k, stride)
    with np.errstate(over="ignore", invalid="ignore"):
        y = cols @ w.reshape(cout, -1).T
    return y, cols, ho, wo


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: Optional[int] = None) -> Tensor:
    """Cross-correlation with weights (Cout, Cin, k, k); 'same' padding by default."""
    n, c, h, w = x.shape
    cout, cin, k, k2 = weight.shape
    if c != cin or k != k2:
        raise ShapeError(f"conv2d: input has {c} channels, weight expects {cin} (kernel {k}x{k2})")
    p = (k - 1) // 2 if padding is None else padding
    y, cols, ho, wo = _conv_forward(x.data, weight.data, stride, p)
    if bias is not None:
        y = y + bias.data
    y = np.ascontiguousarray(y.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))
    out = Tensor(check_finite(y, "conv2d"))
    if _trace is not None:
        _trace.append(("conv", k, cin, cout, stride, (h, w), (ho, wo)))

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        gw = (g2.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g2.sum(axis=0) if bias is not None and bias.requires_grad else None
        gx = None
        if x.requires_grad:
            g_t = g.transpose(1, 0, 2, 3).reshape(cout, -1)
            dcols_t = weight.data.reshape(cout, -1).T @ g_t
            gxp = _col2im(dcols_t, (n, c, h + 2 * p, w + 2 * p), k, stride, ho, wo)
            gx = gxp[:, :, p:p + h, p:p + w]
        return gx, gw, gb

    return record("conv2d", (x, weight, bias), out, bw)


def deconv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1) -> Tensor:
    """Transposed convolution with weights (Cin, Cout, k, k); output is stride*H x stride*W.

    This is the exact adjoint of :func:`conv2d` run with the same weight
    tensor, stride and 'same' padding.
    """
    if stride not in (1, 2):
        raise ShapeError(f"deconv2d stride must be 1 or 2, got {stride}")
    n, c, h, w = x.shape
    cin, cout, k, k2 = weight.shape
    if c != cin or k != k2:
        raise ShapeError(f"deconv2d: input has {c} channels, weight expects {cin}")
    p = (k - 1) // 2
    ho, wo = stride * h, stride * w
    rows = x.data.transpose(0, 2, 3, 1).reshape(-1, cin)
    wm = weight.data.reshape(cin, cout * k * k)
    dcols_t = wm.T @ x.data.transpose(1, 0, 2, 3).reshape(cin, -1)
    yp = _col2im(dcols_t, (n, cout, ho + 2 * p, wo + 2 * p), k, stride, h, w)
    y = np.ascontiguousarray(yp[:, :, p:p + ho, p:p + wo])
    if bias is not None:
        y = y + bias.data.reshape(1, cout, 1, 1)
    out = Tensor(check_finite(y, "deconv2d"))
    if _trace is not None:
        _trace.append(("deconv", k, cin, cout, stride, (h, w), (ho, wo)))

    def bw(g):
        cols, _, _ = _im2col(_pad(g, p), k, stride)
        gx = (cols @ wm.T).reshape(n, h, w, cin).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (rows.T @ cols).reshape(weight.shape) if weight.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if bias is not None and bias.requires_grad else None
        return gx, gw, gb

    return record("deconv2d", (x, weight, bias), out, bw)
