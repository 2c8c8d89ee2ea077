"""Differentiable Laplacian pyramid for NCHW tensors.

Mirrors :mod:`fsenet.pyramid` exactly (same kernel, same mirror-101 border
indices) so the numpy and torch pyramids are interchangeable.
"""

import torch
import torch.nn.functional as F

from ..kernels import BINOMIAL_5, reflect_index


def _index(n, pad, device):
    return torch.as_tensor(reflect_index(n, pad), device=device)


def reflect_pad(x, top, bottom, left, right):
    """Mirror-101 padding of the last two dims; works for any pad size."""
    h, w = x.shape[-2:]
    p_h = max(top, bottom)
    p_w = max(left, right)
    rows = _index(h, p_h, x.device)[p_h - top : p_h + h + bottom]
    cols = _index(w, p_w, x.device)[p_w - left : p_w + w + right]
    return x.index_select(-2, rows).index_select(-1, cols)


def _kernel(x, scale):
    k = torch.as_tensor(BINOMIAL_5, dtype=x.dtype, device=x.device) * scale
    k2 = torch.outer(k, k)
    c = x.shape[1]
    return k2.expand(c, 1, 5, 5)


def pyr_down(x):
    c = x.shape[1]
    xp = reflect_pad(x, 2, 2, 2, 2)
    return F.conv2d(xp, _kernel(x, 1.0), stride=2, groups=c)


def pyr_up(x):
    n, c, h, w = x.shape
    z = x.new_zeros((n, c, 2 * h, 2 * w))
    z[:, :, ::2, ::2] = x
    zp = reflect_pad(z, 2, 2, 2, 2)
    return F.conv2d(zp, _kernel(x, 2.0), groups=c)


def decompose(x, depth):
    highs = []
    cur = x
    for _ in range(depth):
        down = pyr_down(cur)
        highs.append(cur - pyr_up(down))
        cur = down
    return highs, cur


def reconstruct(highs, low):
    cur = low
    for band in reversed(highs):
        cur = pyr_up(cur) + band
    return cur
