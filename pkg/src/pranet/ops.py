"""Differentiable operations on :class:`~pranet.autograd.Tensor`.

All spatial ops assume NCHW layout. Binary elementwise ops accept equal
shapes, a python scalar, or a single-channel ``[N,1,H,W]`` operand that
broadcasts across the channels of an ``[N,C,H,W]`` one.
"""

from __future__ import annotations

from functools import lru_cache
from numbers import Real
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from .autograd import Tensor, make_result
from .errors import InvalidArgument

__all__ = [
    "add", "sub", "mul", "scale", "sigmoid", "reverse_sigmoid", "relu",
    "sum", "mean", "conv2d", "bilinear_resize", "concat_channels",
]


def _as_operand(x):
    if isinstance(x, Tensor):
        return x
    if isinstance(x, Real):
        return float(x)
    raise InvalidArgument(f"unsupported operand type {type(x).__name__}")


def _check_broadcast(a, b) -> None:
    if not (isinstance(a, Tensor) and isinstance(b, Tensor)):
        return
    sa, sb = a.shape, b.shape
    if sa == sb:
        return
    if len(sa) == 4 and len(sb) == 4 and (sa[0], sa[2], sa[3]) == (sb[0], sb[2], sb[3]) \
            and (sa[1] == 1 or sb[1] == 1):
        return
    raise InvalidArgument(f"shapes {sa} and {sb} are not broadcastable")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    return g.sum(axis=1, keepdims=True)


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def _grad_for(x, g):
    return _unbroadcast(g, x.shape) if isinstance(x, Tensor) else None


def add(a, b) -> Tensor:
    a, b = _as_operand(a), _as_operand(b)
    _check_broadcast(a, b)
    out = _data(a) + _data(b)

    def bw(g):
        return _grad_for(a, g), _grad_for(b, g)

    return make_result(out, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _as_operand(a), _as_operand(b)
    _check_broadcast(a, b)
    out = _data(a) - _data(b)

    def bw(g):
        return _grad_for(a, g), _grad_for(b, -g)

    return make_result(np.asarray(out), (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _as_operand(a), _as_operand(b)
    _check_broadcast(a, b)
    da, db = _data(a), _data(b)
    out = da * db

    def bw(g):
        return _grad_for(a, g * db), _grad_for(b, g * da)

    return make_result(out, (a, b), bw, "mul")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = x.data * x.dtype.type(c)

    def bw(g):
        return (g * g.dtype.type(c),)

    return make_result(out, (x,), bw, "scale")


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)

    def bw(g):
        return (g * s * (1 - s),)

    return make_result(s, (x,), bw, "sigmoid")


def reverse_sigmoid(x: Tensor) -> Tensor:
    """``1 - sigmoid(x)``, evaluated as ``sigmoid(-x)`` so large logits keep precision."""
    r = expit(-x.data)

    def bw(g):
        return (-g * r * (1 - r),)

    return make_result(r, (x,), bw, "reverse_sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, x.dtype.type(0))

    def bw(g):
        return (g * mask,)

    return make_result(out, (x,), bw, "relu")


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    out = np.asarray(x.data.sum(dtype=x.dtype), dtype=x.dtype)

    def bw(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return make_result(out, (x,), bw, "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    out = np.asarray(x.data.mean(dtype=x.dtype), dtype=x.dtype)

    def bw(g):
        return (np.full(x.shape, g / n, dtype=x.dtype),)

    return make_result(out, (x,), bw, "mean")


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col and a single matrix product."""
    if x.ndim != 4 or weight.ndim != 4:
        raise InvalidArgument(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    n, cin, h, w = x.shape
    cout, wcin, kh, kw = weight.shape
    if wcin != cin:
        raise InvalidArgument(f"conv2d channel mismatch: input has {cin}, weight expects {wcin}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise InvalidArgument(f"conv2d kernel extents must be odd, got {kh}x{kw}")
    if stride < 1 or padding < 0:
        raise InvalidArgument(f"bad stride/padding {stride}/{padding}")
    if h + 2 * padding < kh or w + 2 * padding < kw:
        raise InvalidArgument(f"input {h}x{w} too small for kernel {kh}x{kw} with padding {padding}")
    if bias is not None and bias.shape != (cout,):
        raise InvalidArgument(f"bias shape {bias.shape} != ({cout},)")

    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    w2 = weight.data.reshape(cout, -1)

    if kh == 1 and kw == 1 and padding == 0:
        xs = x.data[:, :, ::stride, ::stride]
        cols = xs.transpose(0, 2, 3, 1).reshape(-1, cin)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) \
            if padding else x.data
        win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, cin * kh * kw)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, cout).transpose(0, 3, 1, 2))

    def bw(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, cout)
        dw = (g2.T @ cols).reshape(weight.shape)
        db = g.sum(axis=(0, 2, 3)) if bias is not None else None
        dcols = g2 @ w2
        if kh == 1 and kw == 1 and padding == 0:
            dx = np.zeros_like(x.data)
            dx[:, :, ::stride, ::stride] = dcols.reshape(n, ho, wo, cin).transpose(0, 3, 1, 2)
            return dx, dw, db
        dcols = dcols.reshape(n, ho, wo, cin, kh, kw)
        dxp = np.zeros((n, cin, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += \
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, padding:padding + h, padding:padding + w]
        return np.ascontiguousarray(dx), dw, db

    inputs = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        return make_result(out, inputs, lambda g: bw(g)[:2], "conv2d")
    return make_result(out, inputs, bw, "conv2d")


@lru_cache(maxsize=256)
def _interp_matrix(src: int, dst: int, dtype_name: str) -> np.ndarray:
    """Row-stochastic matrix mapping ``src`` samples onto ``dst`` half-pixel centres."""
    m = np.zeros((dst, src), dtype=np.float64)
    coord = (np.arange(dst) + 0.5) * (src / dst) - 0.5
    coord = np.clip(coord, 0.0, src - 1)
    lo = np.floor(coord).astype(np.int64)
    hi = np.minimum(lo + 1, src - 1)
    frac = coord - lo
    rows = np.arange(dst)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    m = m.astype(dtype_name)
    m.setflags(write=False)
    return m


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling with half-pixel centres and edge clamping."""
    if x.ndim != 4:
        raise InvalidArgument(f"bilinear_resize expects a 4-D tensor, got {x.shape}")
    if out_h < 1 or out_w < 1:
        raise InvalidArgument(f"output extent must be positive, got {out_h}x{out_w}")
    _, _, h, w = x.shape
    if (h, w) == (out_h, out_w):
        return make_result(x.data.copy(), (x,), lambda g: (g,), "bilinear_resize")
    ry = _interp_matrix(h, out_h, x.dtype.name)
    rx = _interp_matrix(w, out_w, x.dtype.name)
    out = np.matmul(np.matmul(ry, x.data), rx.T)

    def bw(g):
        return (np.matmul(ry.T, np.matmul(g, rx)),)

    return make_result(out, (x,), bw, "bilinear_resize")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise InvalidArgument("concat_channels needs at least one tensor")
    ref = tensors[0].shape
    for t in tensors:
        if t.ndim != 4 or (t.shape[0], t.shape[2], t.shape[3]) != (ref[0], ref[2], ref[3]):
            raise InvalidArgument(f"concat_channels extent mismatch: {t.shape} vs {ref}")
    out = np.concatenate([t.data for t in tensors], axis=1)
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return make_result(out, tuple(tensors), bw, "concat_channels")
