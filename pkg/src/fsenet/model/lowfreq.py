"""Low-frequency deshading branch.

Axial-attention (DAT) blocks, tri-layer attention alignment (TAA), gated
DFE blocks with SimpleGate / simplified channel attention, and the small
UNet built from them. All modules take and return NCHW tensors.
"""

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import ConfigError, StructureError
from .deform import deform_conv3x3

# upper bound on attention-matrix elements materialised at once
_ATTN_CHUNK_ELEMS = 1 << 24


class LayerNorm2d(nn.Module):
    """LayerNorm over channels, applied independently at every pixel."""

    def __init__(self, channels, eps=1e-6):
        super().__init__()
        self.weight = nn.Parameter(torch.ones(channels))
        self.bias = nn.Parameter(torch.zeros(channels))
        self.eps = eps

    def forward(self, x):
        mu = x.mean(1, keepdim=True)
        var = (x - mu).pow(2).mean(1, keepdim=True)
        y = (x - mu) / torch.sqrt(var + self.eps)
        return y * self.weight.view(1, -1, 1, 1) + self.bias.view(1, -1, 1, 1)


class AxialAttention(nn.Module):
    """Multi-head self-attention along one spatial axis.

    ``axis="h"``: every column is a sequence of H tokens.
    ``axis="w"``: every row is a sequence of W tokens.
    Sequences are processed in chunks so memory stays bounded on large maps.
    """

    def __init__(self, dim, heads=4, axis="h"):
        super().__init__()
        if dim % heads:
            raise ConfigError(f"heads={heads} must divide channels={dim}")
        if axis not in ("h", "w"):
            raise ValueError("axis must be 'h' or 'w'")
        self.dim = dim
        self.heads = heads
        self.axis = axis
        self.qkv = nn.Conv2d(dim, 3 * dim, 1)
        self.qkv_dw = nn.Conv2d(3 * dim, 3 * dim, 3, padding=1, groups=3 * dim)
        self.temperature = nn.Parameter(torch.ones(heads, 1, 1, 1))
        self.proj = nn.Conv2d(dim, dim, 1)
        self.keep_attn = False
        self.last_attn = None

    def _split(self, t, b, h, w):
        t = t.reshape(b, self.heads, self.dim // self.heads, h, w)
        # -> (b, heads, n_seq, seq_len, d)
        return t.permute(0, 1, 4, 3, 2) if self.axis == "h" else t.permute(0, 1, 3, 4, 2)

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.dim:
            raise ConfigError(f"expected {self.dim} channels, got {c}")
        q, k, v = self.qkv_dw(self.qkv(x)).chunk(3, dim=1)
        q, k, v = (self._split(t, b, h, w) for t in (q, k, v))
        n_seq, seq_len, d = q.shape[2], q.shape[3], q.shape[4]
        scale = self.temperature / math.sqrt(d)
        step = max(1, _ATTN_CHUNK_ELEMS // max(1, b * self.heads * seq_len * seq_len))
        outs, attns = [], []
        for s in range(0, n_seq, step):
            qs, ks, vs = q[:, :, s : s + step], k[:, :, s : s + step], v[:, :, s : s + step]
            attn = torch.softmax(qs @ ks.transpose(-1, -2) * scale, dim=-1)
            if self.keep_attn:
                attns.append(attn.detach())
            outs.append(attn @ vs)
        out = torch.cat(outs, dim=2)
        if self.keep_attn:
            self.last_attn = torch.cat(attns, dim=2)
        if self.axis == "h":
            out = out.permute(0, 1, 4, 3, 2)
        else:
            out = out.permute(0, 1, 4, 2, 3)
        return self.proj(out.reshape(b, c, h, w))


class GatedFeedForward(nn.Module):
    """Pointwise expand, depth-wise 3x3, GELU gate, pointwise project."""

    def __init__(self, dim, expansion=2):
        super().__init__()
        hidden = dim * expansion
        self.expand = nn.Conv2d(dim, 2 * hidden, 1)
        self.dw = nn.Conv2d(2 * hidden, 2 * hidden, 3, padding=1, groups=2 * hidden)
        self.project = nn.Conv2d(hidden, dim, 1)

    def forward(self, x):
        a, g = self.dw(self.expand(x)).chunk(2, dim=1)
        return self.project(F.gelu(a) * g)


class DATBlock(nn.Module):
    """Height attention, then width attention, then local convolutional merge.

    Each stage is pre-normalised and wrapped in its own residual connection.
    """

    def __init__(self, dim, heads=4, ffn_expansion=2):
        super().__init__()
        self.norm_h = LayerNorm2d(dim)
        self.attn_h = AxialAttention(dim, heads, axis="h")
        self.norm_w = LayerNorm2d(dim)
        self.attn_w = AxialAttention(dim, heads, axis="w")
        self.norm_ff = LayerNorm2d(dim)
        self.ffn = GatedFeedForward(dim, ffn_expansion)

    def forward(self, x):
        x = x + self.attn_h(self.norm_h(x))
        x = x + self.attn_w(self.norm_w(x))
        return x + self.ffn(self.norm_ff(x))

    def zero_attention_outputs(self):
        for attn in (self.attn_h, self.attn_w):
            nn.init.zeros_(attn.proj.weight)
            nn.init.zeros_(attn.proj.bias)


class TAABlock(nn.Module):
    """Attention across N stacked feature layers.

    The layers are concatenated along channels, mixed by a 1x1 conv, and
    turned into per-layer queries/keys/values by three depth-wise 3x3 convs.
    Each layer is flattened into one long vector, so the attention matrix is
    N x N; every output layer is a convex combination of value layers. The
    result is projected back from N*C to C channels.
    """

    def __init__(self, dim, n_layers=3, alpha_init=1.0):
        super().__init__()
        nc = dim * n_layers
        self.dim = dim
        self.n_layers = n_layers
        self.pre = nn.Conv2d(nc, nc, 1)
        self.q_dw = nn.Conv2d(nc, nc, 3, padding=1, groups=nc)
        self.k_dw = nn.Conv2d(nc, nc, 3, padding=1, groups=nc)
        self.v_dw = nn.Conv2d(nc, nc, 3, padding=1, groups=nc)
        self.alpha = nn.Parameter(torch.tensor(float(alpha_init)))
        self.post = nn.Conv2d(nc, nc, 1)
        self.reduce = nn.Conv2d(nc, dim, 1)
        self.keep_attn = False
        self.last_attn = None

    def aligned(self, features):
        """The N*C-channel output before the final reduction."""
        if len(features) != self.n_layers:
            raise StructureError(f"expected {self.n_layers} layers, got {len(features)}")
        shape = features[0].shape
        if any(f.shape != shape for f in features) or shape[1] != self.dim:
            raise StructureError("TAA inputs must share shape (B, C, h, w)")
        b, _, h, w = shape
        f_in = torch.cat(list(features), dim=1)
        y = self.pre(f_in)
        n = self.n_layers
        q = F.normalize(self.q_dw(y).reshape(b, n, -1), dim=-1)
        k = F.normalize(self.k_dw(y).reshape(b, n, -1), dim=-1)
        v = self.v_dw(y).reshape(b, n, -1)
        attn = torch.softmax(q @ k.transpose(-1, -2) / self.alpha, dim=-1)
        if self.keep_attn:
            self.last_attn = attn.detach()
        mixed = (attn @ v).reshape(b, n * self.dim, h, w)
        return self.post(mixed) + f_in

    def forward(self, features):
        return self.reduce(self.aligned(features))


def simple_gate(x):
    c = x.shape[1]
    if c % 2:
        raise StructureError(f"simple_gate needs an even channel count, got {c}")
    a, b = x.chunk(2, dim=1)
    return a * b


def sca(x, weight, bias=None):
    """Scale each channel by ``weight @ mean_pool(x) (+ bias)``.

    ``weight`` is (C, C) or a (C, C, 1, 1) conv kernel.
    """
    c = x.shape[1]
    weight = weight.reshape(c, c, 1, 1)
    s = x.mean(dim=(2, 3), keepdim=True)
    return x * F.conv2d(s, weight, bias)


class SCA(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.fc = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        return sca(x, self.fc.weight, self.fc.bias)


class DeformConv3x3(nn.Module):
    """Modulated deformable 3x3 conv; offsets/masks predicted from the input.

    The offset branch starts at zero and the mask is ``2 * sigmoid``, so at
    initialisation the layer is exactly a standard 3x3 convolution.
    ``deformable=False`` swaps in a plain conv with the same weight layout.
    """

    def __init__(self, in_ch, out_ch, deformable=True):
        super().__init__()
        self.deformable = deformable
        self.weight = nn.Parameter(torch.empty(out_ch, in_ch, 3, 3))
        self.bias = nn.Parameter(torch.zeros(out_ch))
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        if deformable:
            self.offset = nn.Conv2d(in_ch, 27, 3, padding=1)
            nn.init.zeros_(self.offset.weight)
            nn.init.zeros_(self.offset.bias)

    def forward(self, x):
        if not self.deformable:
            return F.conv2d(x, self.weight, self.bias, padding=1)
        om = self.offset(x)
        mask = 2.0 * torch.sigmoid(om[:, 18:])
        return deform_conv3x3(x, om[:, :18], mask, self.weight, self.bias)


class DFEBlock(nn.Module):
    def __init__(self, channels, deformable=True):
        super().__init__()
        c2 = 2 * channels
        self.norm = LayerNorm2d(channels)
        self.expand = nn.Conv2d(channels, c2, 1)
        self.dw = nn.Conv2d(c2, c2, 3, padding=1, groups=c2)
        self.dcn = DeformConv3x3(c2, c2, deformable)
        self.sca = SCA(channels)
        self.project = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        y = self.dcn(self.dw(self.expand(self.norm(x))))
        y = self.project(self.sca(simple_gate(y)))
        return x + y

    def zero_output(self):
        nn.init.zeros_(self.project.weight)
        nn.init.zeros_(self.project.bias)


class DFEUNet(nn.Module):
    """Encoder/decoder of DFE blocks with additive skips.

    Downsampling is a 2x2 stride-2 conv doubling channels; upsampling is
    bilinear x2 followed by a 1x1 conv halving them.
    """

    def __init__(self, channels, levels=2, blocks=2, deformable=True):
        super().__init__()
        if levels < 1 or blocks < 1:
            raise ConfigError("levels and blocks must be >= 1")
        self.levels = levels
        self.encoders = nn.ModuleList()
        self.downs = nn.ModuleList()
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        ch = channels
        for _ in range(levels - 1):
            self.encoders.append(nn.Sequential(*[DFEBlock(ch, deformable) for _ in range(blocks)]))
            self.downs.append(nn.Conv2d(ch, 2 * ch, 2, stride=2))
            ch *= 2
        self.middle = nn.Sequential(*[DFEBlock(ch, deformable) for _ in range(blocks)])
        for _ in range(levels - 1):
            self.ups.append(nn.Conv2d(ch, ch // 2, 1))
            ch //= 2
            self.decoders.append(nn.Sequential(*[DFEBlock(ch, deformable) for _ in range(blocks)]))

    def forward(self, x):
        f = 2 ** (self.levels - 1)
        if x.shape[-2] % f or x.shape[-1] % f:
            raise StructureError(f"spatial dims {tuple(x.shape[-2:])} not divisible by {f}")
        skips = []
        for enc, down in zip(self.encoders, self.downs):
            x = enc(x)
            skips.append(x)
            x = down(x)
        x = self.middle(x)
        for up, dec in zip(self.ups, self.decoders):
            x = F.interpolate(x, scale_factor=2, mode="bilinear", align_corners=False)
            x = dec(up(x) + skips.pop())
        return x


class LowFreqBranch(nn.Module):
    """Maps the pyramid base (3 channels) to its deshaded version.

    stem -> DAT x k (features collected) -> TAA -> DFE UNet
         -> DAT x k -> TAA -> 3x3 conv, added to the input base.
    """

    def __init__(self, cfg):
        super().__init__()
        c = cfg.base_channels
        self.stem = nn.Conv2d(3, c, 3, padding=1)
        self.dat_in = nn.ModuleList(
            DATBlock(c, cfg.heads, cfg.ffn_expansion) for _ in range(cfg.dat_blocks)
        )
        self.taa_in = TAABlock(c, cfg.dat_blocks, cfg.alpha_init)
        self.unet = DFEUNet(c, cfg.unet_levels, cfg.unet_blocks, cfg.deformable)
        self.dat_out = nn.ModuleList(
            DATBlock(c, cfg.heads, cfg.ffn_expansion) for _ in range(cfg.dat_blocks)
        )
        self.taa_out = TAABlock(c, cfg.dat_blocks, cfg.alpha_init)
        self.head = nn.Conv2d(c, 3, 3, padding=1)

    def forward(self, low):
        if low.shape[1] != 3:
            raise StructureError("low-frequency input must have 3 channels")
        f = self.stem(low)
        feats = []
        for blk in self.dat_in:
            f = blk(f)
            feats.append(f)
        f = self.unet(self.taa_in(feats))
        feats = []
        for blk in self.dat_out:
            f = blk(f)
            feats.append(f)
        return low + self.head(self.taa_out(feats))

    def zero_head(self):
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)
