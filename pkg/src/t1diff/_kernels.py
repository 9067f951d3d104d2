"""Hot row-wise kernels with a numba path and a pure-numpy fallback.

Set ``T1_NUMBA=0`` in the environment to force the numpy path. Both paths
implement identical formulas; they agree to rounding, not bitwise.
"""
from __future__ import annotations

import os

import numpy as np

try:  # pragma: no cover - import guard
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("T1_NUMBA", "1") != "0"


# ----------------------------------------------------------------------------
# numpy reference path
# ----------------------------------------------------------------------------

def _np_layer_norm_fwd(x, eps):
    mean = x.mean(axis=1, keepdims=True)
    xc = x - mean
    var = (xc * xc).mean(axis=1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    return xc * rstd, rstd[:, 0]


def _np_layer_norm_bwd(g, y, rstd):
    gm = g.mean(axis=1, keepdims=True)
    gym = (g * y).mean(axis=1, keepdims=True)
    return (g - gm - y * gym) * rstd[:, None]


def _np_softmax_fwd(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_bwd(g, y):
    return y * (g - (g * y).sum(axis=1, keepdims=True))


_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


def _np_gelu_fwd(x):
    th = np.tanh(_GELU_C * (x + _GELU_A * (x * x * x)))
    return 0.5 * x * (1.0 + th), th


def _np_gelu_bwd(g, x, th):
    dinner = _GELU_C * (1.0 + 3.0 * _GELU_A * (x * x))
    return g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner)


def _np_fill_triangle(img, tri, color):
    h, w = img.shape[:2]
    (x0, y0), (x1, y1), (x2, y2) = tri
    xmin = max(int(np.floor(min(x0, x1, x2))), 0)
    xmax = min(int(np.ceil(max(x0, x1, x2))), w - 1)
    ymin = max(int(np.floor(min(y0, y1, y2))), 0)
    ymax = min(int(np.ceil(max(y0, y1, y2))), h - 1)
    if xmin > xmax or ymin > ymax:
        return 0
    area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    if area == 0.0:
        return 0
    ys, xs = np.mgrid[ymin:ymax + 1, xmin:xmax + 1]
    px = xs + 0.5
    py = ys + 0.5
    w0 = (x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)
    w1 = (x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)
    w2 = (x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)
    if area > 0:
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    else:
        inside = (w0 <= 0) & (w1 <= 0) & (w2 <= 0)
    sub = img[ymin:ymax + 1, xmin:xmax + 1]
    sub[inside] = color
    return int(inside.sum())


# ----------------------------------------------------------------------------
# numba path
# ----------------------------------------------------------------------------

if _HAVE_NUMBA:

    @njit(cache=True)
    def _nb_layer_norm_fwd(x, eps):
        n, d = x.shape
        y = np.empty_like(x)
        rstd = np.empty(n, dtype=x.dtype)
        for i in range(n):
            m = 0.0
            for j in range(d):
                m += x[i, j]
            m /= d
            v = 0.0
            for j in range(d):
                c = x[i, j] - m
                v += c * c
            v /= d
            r = 1.0 / np.sqrt(v + eps)
            rstd[i] = r
            for j in range(d):
                y[i, j] = (x[i, j] - m) * r
        return y, rstd

    @njit(cache=True)
    def _nb_layer_norm_bwd(g, y, rstd):
        n, d = g.shape
        dx = np.empty_like(g)
        for i in range(n):
            gm = 0.0
            gym = 0.0
            for j in range(d):
                gm += g[i, j]
                gym += g[i, j] * y[i, j]
            gm /= d
            gym /= d
            for j in range(d):
                dx[i, j] = (g[i, j] - gm - y[i, j] * gym) * rstd[i]
        return dx

    @njit(cache=True)
    def _nb_softmax_fwd(x):
        n, d = x.shape
        y = np.empty_like(x)
        for i in range(n):
            mx = x[i, 0]
            for j in range(1, d):
                if x[i, j] > mx:
                    mx = x[i, j]
            s = 0.0
            for j in range(d):
                e = np.exp(x[i, j] - mx)
                y[i, j] = e
                s += e
            for j in range(d):
                y[i, j] /= s
        return y

    @njit(cache=True)
    def _nb_softmax_bwd(g, y):
        n, d = g.shape
        dx = np.empty_like(g)
        for i in range(n):
            s = 0.0
            for j in range(d):
                s += g[i, j] * y[i, j]
            for j in range(d):
                dx[i, j] = y[i, j] * (g[i, j] - s)
        return dx

    @njit(cache=True)
    def _nb_gelu_bwd(g, x, th):
        gf, xf, tf = g.ravel(), x.ravel(), th.ravel()
        out = np.empty_like(gf)
        for i in range(gf.size):
            v = xf[i]
            t = tf[i]
            d = 0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_A * v * v)
            out[i] = gf[i] * d
        return out.reshape(g.shape)

    @njit(cache=True)
    def _nb_fill_triangle(img, tri, color):
        h = img.shape[0]
        w = img.shape[1]
        x0, y0 = tri[0, 0], tri[0, 1]
        x1, y1 = tri[1, 0], tri[1, 1]
        x2, y2 = tri[2, 0], tri[2, 1]
        xmin = max(int(np.floor(min(x0, min(x1, x2)))), 0)
        xmax = min(int(np.ceil(max(x0, max(x1, x2)))), w - 1)
        ymin = max(int(np.floor(min(y0, min(y1, y2)))), 0)
        ymax = min(int(np.ceil(max(y0, max(y1, y2)))), h - 1)
        area = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
        count = 0
        if area == 0.0:
            return 0
        for yy in range(ymin, ymax + 1):
            py = yy + 0.5
            for xx in range(xmin, xmax + 1):
                px = xx + 0.5
                w0 = (x1 - px) * (y2 - py) - (x2 - px) * (y1 - py)
                w1 = (x2 - px) * (y0 - py) - (x0 - px) * (y2 - py)
                w2 = (x0 - px) * (y1 - py) - (x1 - px) * (y0 - py)
                if area > 0:
                    ok = w0 >= 0 and w1 >= 0 and w2 >= 0
                else:
                    ok = w0 <= 0 and w1 <= 0 and w2 <= 0
                if ok:
                    for c in range(img.shape[2]):
                        img[yy, xx, c] = color[c]
                    count += 1
        return count


# ----------------------------------------------------------------------------
# dispatch
# ----------------------------------------------------------------------------

def layer_norm_fwd(x: np.ndarray, eps: float, use_numba: bool | None = None):
    """Normalize rows of a 2-D array. Returns (y, rstd)."""
    if use_numba if use_numba is not None else USE_NUMBA:
        return _nb_layer_norm_fwd(np.ascontiguousarray(x), x.dtype.type(eps))
    return _np_layer_norm_fwd(x, eps)


def layer_norm_bwd(g, y, rstd, use_numba: bool | None = None):
    if use_numba if use_numba is not None else USE_NUMBA:
        return _nb_layer_norm_bwd(np.ascontiguousarray(g), np.ascontiguousarray(y), rstd)
    return _np_layer_norm_bwd(g, y, rstd)


def softmax_fwd(x: np.ndarray, use_numba: bool | None = None):
    """Row softmax of a 2-D array with max subtraction."""
    if use_numba if use_numba is not None else USE_NUMBA:
        return _nb_softmax_fwd(np.ascontiguousarray(x))
    return _np_softmax_fwd(x)


def softmax_bwd(g, y, use_numba: bool | None = None):
    if use_numba if use_numba is not None else USE_NUMBA:
        return _nb_softmax_bwd(np.ascontiguousarray(g), np.ascontiguousarray(y))
    return _np_softmax_bwd(g, y)


def gelu_fwd(x: np.ndarray):
    """tanh-approximate GELU. Returns (y, tanh term kept for backward).

    numpy only: its vectorized tanh beats a scalar numba loop several-fold.
    """
    return _np_gelu_fwd(x)


def gelu_bwd(g, x, th, use_numba: bool | None = None):
    if use_numba if use_numba is not None else USE_NUMBA:
        return _nb_gelu_bwd(np.ascontiguousarray(g), np.ascontiguousarray(x), np.ascontiguousarray(th))
    return _np_gelu_bwd(g, x, th)


def fill_triangle(img: np.ndarray, tri: np.ndarray, color: np.ndarray,
                  use_numba: bool | None = None) -> int:
    """Paint pixels whose centers fall inside ``tri`` (3x2, x/y in pixels).

    Modifies ``img`` (H x W x C) in place and returns the painted pixel count.
    """
    tri = np.asarray(tri, dtype=np.float64)
    color = np.asarray(color, dtype=img.dtype)
    if use_numba if use_numba is not None else USE_NUMBA:
        return int(_nb_fill_triangle(img, tri, color))
    return _np_fill_triangle(img, tri, color)
