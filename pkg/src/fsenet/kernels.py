"""Hot numeric kernels with paired numba / numpy implementations.

Every kernel exists twice: ``_nb_*`` (compiled loops) and ``_np_*``
(vectorised numpy). The public wrappers dispatch on :data:`USE_NUMBA`; tests
exercise both paths and check that they agree.

All kernels take float64 arrays laid out as (H, W, C) unless noted.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

BINOMIAL_5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def _pick(nb_fn, np_fn, backend):
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba":
        return nb_fn
    if backend == "numpy":
        return np_fn
    raise ValueError(f"unknown backend {backend!r}")


def reflect_index(n, pad):
    """Source indices for positions ``-pad .. n+pad-1`` under mirror-101 borders.

    Folding repeats as often as needed, so ``pad`` may exceed ``n``. A length-1
    axis degenerates to replication.
    """
    idx = np.arange(-pad, n + pad)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * n - 2
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


# --------------------------------------------------------------------------
# pyramid: blur + decimate
# --------------------------------------------------------------------------


@njit(cache=True)
def _nb_blur_decimate(img, k, ridx, cidx):
    H, W, C = img.shape
    Ho = H // 2
    Wo = W // 2
    tmp = np.empty((H, Wo, C))
    for y in range(H):
        for xo in range(Wo):
            for c in range(C):
                s = 0.0
                for t in range(5):
                    s += k[t] * img[y, cidx[2 * xo + t], c]
                tmp[y, xo, c] = s
    out = np.empty((Ho, Wo, C))
    for yo in range(Ho):
        for xo in range(Wo):
            for c in range(C):
                s = 0.0
                for t in range(5):
                    s += k[t] * tmp[ridx[2 * yo + t], xo, c]
                out[yo, xo, c] = s
    return out


def _np_blur_decimate(img, k, ridx, cidx):
    H, W, _ = img.shape
    Ho, Wo = H // 2, W // 2
    tmp = sum(k[t] * img[:, cidx[t : t + 2 * Wo : 2], :] for t in range(5))
    return sum(k[t] * tmp[ridx[t : t + 2 * Ho : 2]] for t in range(5))


def blur_decimate(img, backend=None):
    img = np.ascontiguousarray(img, dtype=np.float64)
    H, W, _ = img.shape
    ridx = reflect_index(H, 2)
    cidx = reflect_index(W, 2)
    fn = _pick(_nb_blur_decimate, _np_blur_decimate, backend)
    return fn(img, BINOMIAL_5, ridx, cidx)


# --------------------------------------------------------------------------
# pyramid: zero-insert + blur
# --------------------------------------------------------------------------


@njit(cache=True)
def _nb_upsample_blur(img, k2, ridx, cidx):
    # ridx/cidx index the zero-inserted (2H, 2W) grid; odd entries are holes
    H, W, C = img.shape
    H2 = 2 * H
    W2 = 2 * W
    tmp = np.zeros((H, W2, C))
    for y in range(H):
        for x in range(W2):
            for t in range(5):
                j = cidx[x + t]
                if j % 2 == 0:
                    w = k2[t]
                    for c in range(C):
                        tmp[y, x, c] += w * img[y, j // 2, c]
    out = np.zeros((H2, W2, C))
    for y in range(H2):
        for t in range(5):
            i = ridx[y + t]
            if i % 2 == 0:
                w = k2[t]
                for x in range(W2):
                    for c in range(C):
                        out[y, x, c] += w * tmp[i // 2, x, c]
    return out


def _np_upsample_blur(img, k2, ridx, cidx):
    H, W, C = img.shape
    z = np.zeros((H, 2 * W, C))
    z[:, ::2] = img
    tmp = sum(k2[t] * z[:, cidx[t : t + 2 * W]] for t in range(5))
    z = np.zeros((2 * H, 2 * W, C))
    z[::2] = tmp
    return sum(k2[t] * z[ridx[t : t + 2 * H]] for t in range(5))


def upsample_blur(img, backend=None):
    img = np.ascontiguousarray(img, dtype=np.float64)
    H, W, _ = img.shape
    ridx = reflect_index(2 * H, 2)
    cidx = reflect_index(2 * W, 2)
    fn = _pick(_nb_upsample_blur, _np_upsample_blur, backend)
    return fn(img, 2.0 * BINOMIAL_5, ridx, cidx)


# --------------------------------------------------------------------------
# SSIM: separable gaussian filter, valid region only
# --------------------------------------------------------------------------


@njit(cache=True)
def _nb_filter_valid(a, g):
    H, W = a.shape
    n = g.shape[0]
    Ho = H - n + 1
    Wo = W - n + 1
    tmp = np.empty((H, Wo))
    for y in range(H):
        for x in range(Wo):
            s = 0.0
            for t in range(n):
                s += g[t] * a[y, x + t]
            tmp[y, x] = s
    out = np.empty((Ho, Wo))
    for y in range(Ho):
        for x in range(Wo):
            s = 0.0
            for t in range(n):
                s += g[t] * tmp[y + t, x]
            out[y, x] = s
    return out


def _np_filter_valid(a, g):
    win = np.lib.stride_tricks.sliding_window_view(a, g.shape[0], axis=1)
    tmp = win @ g
    win = np.lib.stride_tricks.sliding_window_view(tmp, g.shape[0], axis=0)
    return win @ g


def filter_valid(a, g, backend=None):
    """Correlate a 2-D array with the separable window ``outer(g, g)``; no padding."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    g = np.ascontiguousarray(g, dtype=np.float64)
    fn = _pick(_nb_filter_valid, _np_filter_valid, backend)
    return fn(a, g)


# --------------------------------------------------------------------------
# bilinear resize, half-pixel centres
# --------------------------------------------------------------------------


def bilinear_coords(n_in, n_out):
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


@njit(cache=True)
def _nb_resize(img, y0, y1, wy, x0, x1, wx):
    C = img.shape[2]
    Ho = y0.shape[0]
    Wo = x0.shape[0]
    out = np.empty((Ho, Wo, C))
    for y in range(Ho):
        a = wy[y]
        for x in range(Wo):
            b = wx[x]
            for c in range(C):
                top = (1.0 - b) * img[y0[y], x0[x], c] + b * img[y0[y], x1[x], c]
                bot = (1.0 - b) * img[y1[y], x0[x], c] + b * img[y1[y], x1[x], c]
                out[y, x, c] = (1.0 - a) * top + a * bot
    return out


def _np_resize(img, y0, y1, wy, x0, x1, wx):
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = (1.0 - wx) * img[y0][:, x0] + wx * img[y0][:, x1]
    bot = (1.0 - wx) * img[y1][:, x0] + wx * img[y1][:, x1]
    return (1.0 - wy) * top + wy * bot


def resize(img, new_h, new_w, backend=None):
    img = np.ascontiguousarray(img, dtype=np.float64)
    y0, y1, wy = bilinear_coords(img.shape[0], new_h)
    x0, x1, wx = bilinear_coords(img.shape[1], new_w)
    fn = _pick(_nb_resize, _np_resize, backend)
    return fn(img, y0, y1, wy, x0, x1, wx)
