"""Modulated deformable 3x3 convolution via explicit bilinear sampling.

Offsets use the common (dy, dx)-interleaved layout: channel ``2k`` is the
vertical and ``2k + 1`` the horizontal shift of tap ``k`` (row-major over the
3x3 window). Samples falling outside the map read zero.
"""

import torch

_CHUNK_ELEMS = 1 << 22

_KY = (-1, -1, -1, 0, 0, 0, 1, 1, 1)
_KX = (-1, 0, 1, -1, 0, 1, -1, 0, 1)


def _sample(flat, yi, xi, h, w):
    # flat: (b, c, h*w); yi, xi: (b, 9, r, w) integer-valued floats
    b, c, _ = flat.shape
    valid = (yi >= 0) & (yi <= h - 1) & (xi >= 0) & (xi <= w - 1)
    idx = (yi.clamp(0, h - 1) * w + xi.clamp(0, w - 1)).long()
    g = flat.gather(2, idx.reshape(b, 1, -1).expand(b, c, idx[0].numel()))
    return g.reshape(b, c, *idx.shape[1:]) * valid.unsqueeze(1).to(flat.dtype)


def deform_conv3x3(x, offset, mask, weight, bias=None):
    """``x`` (B, C, H, W); ``offset`` (B, 18, H, W); ``mask`` (B, 9, H, W) or None;
    ``weight`` (O, C, 3, 3). Stride 1, padding 1, dilation 1."""
    b, c, h, w = x.shape
    o = weight.shape[0]
    dev, dt = x.device, x.dtype
    ky = torch.tensor(_KY, device=dev, dtype=dt).view(1, 9, 1, 1)
    kx = torch.tensor(_KX, device=dev, dtype=dt).view(1, 9, 1, 1)
    flat = x.reshape(b, c, h * w)
    wmat = weight.reshape(o, c, 9)
    rows = max(1, _CHUNK_ELEMS // max(1, b * c * 9 * w))
    outs = []
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        ys = torch.arange(r0, r1, device=dev, dtype=dt).view(1, 1, -1, 1)
        xs = torch.arange(w, device=dev, dtype=dt).view(1, 1, 1, -1)
        py = ys + ky + offset[:, 0::2, r0:r1]
        px = xs + kx + offset[:, 1::2, r0:r1]
        y0, x0 = torch.floor(py), torch.floor(px)
        wy, wx = (py - y0).unsqueeze(1), (px - x0).unsqueeze(1)
        val = (
            (1 - wy) * (1 - wx) * _sample(flat, y0, x0, h, w)
            + (1 - wy) * wx * _sample(flat, y0, x0 + 1, h, w)
            + wy * (1 - wx) * _sample(flat, y0 + 1, x0, h, w)
            + wy * wx * _sample(flat, y0 + 1, x0 + 1, h, w)
        )
        if mask is not None:
            val = val * mask[:, :, r0:r1].unsqueeze(1)
        outs.append(torch.einsum("bckhw,ock->bohw", val, wmat))
    out = torch.cat(outs, dim=2)
    if bias is not None:
        out = out + bias.view(1, -1, 1, 1)
    return out
