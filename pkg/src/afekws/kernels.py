"""Hot numeric kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` implementation (suffix
``_njit``) and a pure numpy/scipy implementation (suffix ``_numpy``).
The active backend is chosen once at import time:

* default: numba, falling back to numpy if numba cannot be imported;
* ``AFEKWS_NUMBA=0`` in the environment forces the numpy backend.

Both backends compute the same quantities; they may differ in the last
few ulps because summation order differs.  ``benchmarks/bench_kernels.py``
times the two side by side.

Convolution layout is NCHW.  Inputs to the conv kernels are already
zero-padded; stride handling lives here.
"""

from __future__ import annotations

import os

import numpy as np
from scipy.signal import lfilter

USE_NUMBA = os.environ.get("AFEKWS_NUMBA", "1") != "0"

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    """Strided (B, C, OH, OW, KH, KW) view of a padded NCHW array."""
    view = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, ::sh, ::sw]


def conv2d_forward_numpy(xp, w, sh, sw):
    win = _windows(xp, w.shape[2], w.shape[3], sh, sw)
    return np.einsum("bcijuv,ocuv->boij", win, w, optimize=True)


def conv2d_backward_w_numpy(xp, dy, sh, sw, kh, kw):
    win = _windows(xp, kh, kw, sh, sw)
    return np.einsum("bcijuv,boij->ocuv", win, dy, optimize=True)


def conv2d_backward_x_numpy(dy, w, xp_shape, sh, sw):
    b, oc, oh, ow = dy.shape
    _, ic, kh, kw = w.shape
    # scatter dy onto the upsampled grid, then correlate with the flipped
    # kernel (transposed convolution)
    dz = np.zeros((b, oc, (oh - 1) * sh + kh, (ow - 1) * sw + kw), dtype=dy.dtype)
    dz[:, :, : (oh - 1) * sh + 1 : sh, : (ow - 1) * sw + 1 : sw] = dy
    wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).copy()
    full = conv2d_forward_numpy(dz, wt, 1, 1)  # (b, ic, oh', ow')
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    h = min(full.shape[2], xp_shape[2])
    v = min(full.shape[3], xp_shape[3])
    dxp[:, :, :h, :v] = full[:, :, :h, :v]
    return dxp


def depthwise_forward_numpy(xp, w):
    win = _windows(xp, w.shape[1], w.shape[2], 1, 1)
    return np.einsum("bcijuv,cuv->bcij", win, w, optimize=True)


def depthwise_backward_w_numpy(xp, dy, kh, kw):
    win = _windows(xp, kh, kw, 1, 1)
    return np.einsum("bcijuv,bcij->cuv", win, dy, optimize=True)


def depthwise_backward_x_numpy(dy, w, xp_shape):
    b, c, oh, ow = dy.shape
    kh, kw = w.shape[1], w.shape[2]
    dz = np.zeros((b, c, oh + 2 * (kh - 1), ow + 2 * (kw - 1)), dtype=dy.dtype)
    dz[:, :, kh - 1 : kh - 1 + oh, kw - 1 : kw - 1 + ow] = dy
    full = depthwise_forward_numpy(dz, w[:, ::-1, ::-1].copy())
    dxp = np.zeros(xp_shape, dtype=dy.dtype)
    h = min(full.shape[2], xp_shape[2])
    v = min(full.shape[3], xp_shape[3])
    dxp[:, :, :h, :v] = full[:, :, :h, :v]
    return dxp


def biquad_apply_numpy(b0, b1, b2, a1, a2, x):
    return lfilter([b0, b1, b2], [1.0, a1, a2], x).astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if USE_NUMBA:

    @njit(cache=True)
    def conv2d_forward_njit(xp, w, sh, sw):
        b, ic, ih, iw = xp.shape
        oc = w.shape[0]
        kh, kw = w.shape[2], w.shape[3]
        oh = (ih - kh) // sh + 1
        ow = (iw - kw) // sw + 1
        out = np.zeros((b, oc, oh, ow), dtype=xp.dtype)
        for n in range(b):
            for o in range(oc):
                for i in range(oh):
                    for j in range(ow):
                        acc = 0.0
                        for c in range(ic):
                            for u in range(kh):
                                for v in range(kw):
                                    acc += xp[n, c, i * sh + u, j * sw + v] * w[o, c, u, v]
                        out[n, o, i, j] = acc
        return out

    @njit(cache=True)
    def conv2d_backward_w_njit(xp, dy, sh, sw, kh, kw):
        b, ic = xp.shape[0], xp.shape[1]
        oc, oh, ow = dy.shape[1], dy.shape[2], dy.shape[3]
        dw = np.zeros((oc, ic, kh, kw), dtype=xp.dtype)
        for n in range(b):
            for o in range(oc):
                for i in range(oh):
                    for j in range(ow):
                        g = dy[n, o, i, j]
                        for c in range(ic):
                            for u in range(kh):
                                for v in range(kw):
                                    dw[o, c, u, v] += xp[n, c, i * sh + u, j * sw + v] * g
        return dw

    @njit(cache=True)
    def conv2d_backward_x_njit(dy, w, xp_shape, sh, sw):
        b, oc, oh, ow = dy.shape
        ic, kh, kw = w.shape[1], w.shape[2], w.shape[3]
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for n in range(b):
            for o in range(oc):
                for i in range(oh):
                    for j in range(ow):
                        g = dy[n, o, i, j]
                        for c in range(ic):
                            for u in range(kh):
                                for v in range(kw):
                                    dxp[n, c, i * sh + u, j * sw + v] += w[o, c, u, v] * g
        return dxp

    @njit(cache=True)
    def depthwise_forward_njit(xp, w):
        b, c, ih, iw = xp.shape
        kh, kw = w.shape[1], w.shape[2]
        oh = ih - kh + 1
        ow = iw - kw + 1
        out = np.zeros((b, c, oh, ow), dtype=xp.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        acc = 0.0
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[n, ch, i + u, j + v] * w[ch, u, v]
                        out[n, ch, i, j] = acc
        return out

    @njit(cache=True)
    def depthwise_backward_w_njit(xp, dy, kh, kw):
        b, c, oh, ow = dy.shape
        dw = np.zeros((c, kh, kw), dtype=xp.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        g = dy[n, ch, i, j]
                        for u in range(kh):
                            for v in range(kw):
                                dw[ch, u, v] += xp[n, ch, i + u, j + v] * g
        return dw

    @njit(cache=True)
    def depthwise_backward_x_njit(dy, w, xp_shape):
        b, c, oh, ow = dy.shape
        kh, kw = w.shape[1], w.shape[2]
        dxp = np.zeros(xp_shape, dtype=dy.dtype)
        for n in range(b):
            for ch in range(c):
                for i in range(oh):
                    for j in range(ow):
                        g = dy[n, ch, i, j]
                        for u in range(kh):
                            for v in range(kw):
                                dxp[n, ch, i + u, j + v] += w[ch, u, v] * g
        return dxp

    @njit(cache=True)
    def biquad_apply_njit(b0, b1, b2, a1, a2, x):
        # direct form II transposed
        y = np.empty_like(x)
        s1 = 0.0
        s2 = 0.0
        for n in range(x.shape[0]):
            yn = b0 * x[n] + s1
            s1 = b1 * x[n] - a1 * yn + s2
            s2 = b2 * x[n] - a2 * yn
            y[n] = yn
        return y


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

if USE_NUMBA:
    _conv2d_forward = conv2d_forward_njit
    _conv2d_backward_w = conv2d_backward_w_njit
    _conv2d_backward_x = conv2d_backward_x_njit
    _depthwise_forward = depthwise_forward_njit
    _depthwise_backward_w = depthwise_backward_w_njit
    _depthwise_backward_x = depthwise_backward_x_njit
    _biquad_apply = biquad_apply_njit
else:
    _conv2d_forward = conv2d_forward_numpy
    _conv2d_backward_w = conv2d_backward_w_numpy
    _conv2d_backward_x = conv2d_backward_x_numpy
    _depthwise_forward = depthwise_forward_numpy
    _depthwise_backward_w = depthwise_backward_w_numpy
    _depthwise_backward_x = depthwise_backward_x_numpy
    _biquad_apply = biquad_apply_numpy


def conv2d_forward(xp, w, sh, sw):
    return _conv2d_forward(xp, w, sh, sw)


def conv2d_backward_w(xp, dy, sh, sw, kh, kw):
    return _conv2d_backward_w(xp, dy, sh, sw, kh, kw)


def conv2d_backward_x(dy, w, xp_shape, sh, sw):
    return _conv2d_backward_x(dy, w, tuple(xp_shape), sh, sw)


def depthwise_forward(xp, w):
    return _depthwise_forward(xp, w)


def depthwise_backward_w(xp, dy, kh, kw):
    return _depthwise_backward_w(xp, dy, kh, kw)


def depthwise_backward_x(dy, w, xp_shape):
    return _depthwise_backward_x(dy, w, tuple(xp_shape))


def biquad_apply(b0, b1, b2, a1, a2, x):
    return _biquad_apply(b0, b1, b2, a1, a2, x)
