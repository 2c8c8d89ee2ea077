"""High-frequency restoration: contour learning, band gating, TRM and SPP."""

import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import StructureError


def upsample_to(x, size):
    return F.interpolate(x, size=size, mode="bilinear", align_corners=False)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(channels, channels, 3, padding=1),
        )

    def forward(self, x):
        return x + self.body(x)


class ContourNet(nn.Module):
    """Predicts a one-channel gating map for the coarsest high band.

    Input is ``[up(low_in), up(low_out), band]`` (9 channels) at band size.
    """

    def __init__(self, channels=16, blocks=3):
        super().__init__()
        self.head = nn.Sequential(nn.Conv2d(9, channels, 3, padding=1), nn.LeakyReLU(0.2))
        self.body = nn.Sequential(*[ResidualBlock(channels) for _ in range(blocks)])
        self.proj = nn.Conv2d(channels, 1, 1)

    def forward(self, low_in, low_out, band):
        h, w = band.shape[-2:]
        if low_in.shape != low_out.shape:
            raise StructureError("low_in and low_out differ in shape")
        if (2 * low_in.shape[-2], 2 * low_in.shape[-1]) != (h, w):
            raise StructureError(
                f"band {h}x{w} must be twice the base {tuple(low_in.shape[-2:])}"
            )
        z = torch.cat([upsample_to(low_in, (h, w)), upsample_to(low_out, (h, w)), band], dim=1)
        return self.proj(self.body(self.head(z)))

    def constant_init(self, value=1.0):
        nn.init.zeros_(self.proj.weight)
        nn.init.constant_(self.proj.bias, value)


def gate_band(band, contour):
    if contour.shape[1] != 1 or band.shape[-2:] != contour.shape[-2:]:
        raise StructureError(
            f"contour {tuple(contour.shape)} cannot gate band {tuple(band.shape)}"
        )
    return band * contour


class SEBlock(nn.Module):
    def __init__(self, channels, reduction=4):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Conv2d(channels, hidden, 1)
        self.fc2 = nn.Conv2d(hidden, channels, 1)

    def gate(self, pooled):
        return torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))

    def forward(self, x):
        return x * self.gate(x.mean(dim=(2, 3), keepdim=True))


class AggregationNode(nn.Module):
    """SE-reweight the concatenation of trunk and new features, then 3x3-compress.

    The concatenation is never materialised: the compress conv is split into
    its trunk and new halves, which keeps full-resolution memory down.
    """

    def __init__(self, channels, reduction=4):
        super().__init__()
        self.se = SEBlock(2 * channels, reduction)
        self.compress = nn.Conv2d(2 * channels, channels, 3, padding=1)

    def forward(self, trunk, new):
        c = trunk.shape[1]
        pooled = torch.cat([trunk.mean(dim=(2, 3), keepdim=True), new.mean(dim=(2, 3), keepdim=True)], dim=1)
        s = self.se.gate(pooled)
        w = self.compress.weight
        out = F.conv2d(trunk * s[:, :c], w[:, :c], self.compress.bias, padding=1)
        return out.add_(F.conv2d(new * s[:, c:], w[:, c:], padding=1))


class SPP(nn.Module):
    """Multi-grid average pooling fused back into the input.

    Grids larger than the feature map are skipped; the fuse conv is then
    evaluated without the weights belonging to the skipped levels. The fuse
    weights of each level are applied at pooled resolution before the
    upsample (both are linear and bilinear weights sum to one), so no
    full-resolution concatenation is built.
    """

    def __init__(self, channels, grids=(1, 2, 4, 8)):
        super().__init__()
        self.grids = tuple(grids)
        self.branch_ch = max(1, channels // 4)
        self.branches = nn.ModuleList(nn.Conv2d(channels, self.branch_ch, 1) for _ in self.grids)
        self.fuse = nn.Conv2d(channels + self.branch_ch * len(self.grids), channels, 1)
        self.channels = channels

    def active_levels(self, h, w):
        return [i for i, g in enumerate(self.grids) if g <= min(h, w)]

    def forward(self, x):
        h, w = x.shape[-2:]
        c = self.channels
        out = F.conv2d(x, self.fuse.weight[:, :c], self.fuse.bias)
        for i in self.active_levels(h, w):
            p = self.branches[i](F.adaptive_avg_pool2d(x, self.grids[i]))
            start = c + i * self.branch_ch
            p = F.conv2d(p, self.fuse.weight[:, start : start + self.branch_ch])
            out = out.add_(upsample_to(p, (h, w)))
        return out


class TRM(nn.Module):
    """Dilated 3x3 convs, each followed by an attentive aggregation node; SPP at the end."""

    def __init__(self, channels, dilations=(1, 2, 4, 8), reduction=4, spp_grids=(1, 2, 4, 8)):
        super().__init__()
        self.convs = nn.ModuleList(
            nn.Conv2d(channels, channels, 3, padding=r, dilation=r) for r in dilations
        )
        self.nodes = nn.ModuleList(AggregationNode(channels, reduction) for _ in dilations)
        self.spp = SPP(channels, spp_grids)

    def forward(self, x):
        for conv, node in zip(self.convs, self.nodes):
            x = node(x, F.leaky_relu(conv(x), 0.2, inplace=True))
        return self.spp(x)


class ContourExpander(nn.Module):
    """Bilinear x2 upsample of a contour plus a TRM-refined correction."""

    def __init__(self, channels=16, dilations=(1, 2, 4, 8), reduction=4, spp_grids=(1, 2, 4, 8)):
        super().__init__()
        self.head = nn.Conv2d(1, channels, 3, padding=1)
        self.trm = TRM(channels, dilations, reduction, spp_grids)
        self.proj = nn.Conv2d(channels, 1, 1)

    def forward(self, contour):
        h, w = contour.shape[-2:]
        up = upsample_to(contour, (2 * h, 2 * w))
        return up + self.proj(self.trm(F.leaky_relu(self.head(up), 0.2, inplace=True)))

    def zero_refinement(self):
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)
