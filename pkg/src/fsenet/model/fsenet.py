"""Full network: pyramid split, two branches, contour gating, reconstruction."""

from collections.abc import Mapping

import numpy as np
import torch
import torch.nn as nn

from ..errors import StructureError
from ..image import as_image, fit_max_side, resize_bilinear
from . import lp
from .config import FSENetConfig
from .highfreq import ContourExpander, ContourNet, gate_band
from .lowfreq import AxialAttention, LowFreqBranch, TAABlock


class FSENet(nn.Module):
    def __init__(self, cfg=None):
        super().__init__()
        self.cfg = cfg or FSENetConfig()
        cfg = self.cfg
        self.low_branch = LowFreqBranch(cfg)
        self.contour = ContourNet(cfg.hf_channels, cfg.contour_blocks)
        n_expand = cfg.depth - 1
        if cfg.share_refinement and n_expand:
            n_expand = 1
        self.expanders = nn.ModuleList(
            ContourExpander(cfg.hf_channels, cfg.trm_dilations, cfg.se_reduction, cfg.spp_grids)
            for _ in range(n_expand)
        )

    def identity_init(self):
        """Zero the branch outputs so the network starts as the identity map."""
        self.low_branch.zero_head()
        self.contour.constant_init(1.0)
        for e in self.expanders:
            e.zero_refinement()
        return self

    def _expander(self, level):
        # level counts expansions from the coarse end: 0 is the first one
        if self.cfg.share_refinement:
            return self.expanders[0]
        return self.expanders[level]

    def forward_bands(self, x):
        """Run on an already padded batch; returns (output, low', contours)."""
        depth = self.cfg.depth
        highs, low = lp.decompose(x, depth)
        low_out = self.low_branch(low)
        contour = self.contour(low, low_out, highs[-1])
        contours = [contour]
        gated = [gate_band(highs[-1], contour)]
        for level, i in enumerate(range(depth - 2, -1, -1)):
            contour = self._expander(level)(contour)
            contours.append(contour)
            gated.insert(0, gate_band(highs[i], contour))
        return lp.reconstruct(gated, low_out), low_out, contours

    def forward(self, x, clamp=True):
        if x.ndim != 4 or x.shape[1] != 3:
            raise StructureError(f"expected (B, 3, H, W) input, got {tuple(x.shape)}")
        h, w = x.shape[-2:]
        f = self.cfg.pad_factor
        ph, pw = -h % f, -w % f
        top, left = ph // 2, pw // 2
        xp = lp.reflect_pad(x, top, ph - top, left, pw - left)
        out, _, _ = self.forward_bands(xp)
        out = out[..., top : top + h, left : left + w]
        return out.clamp(0.0, 1.0) if clamp else out

    def attention_modules(self):
        return [m for m in self.modules() if isinstance(m, (AxialAttention, TAABlock))]

    def keep_attention(self, flag=True):
        for m in self.attention_modules():
            m.keep_attn = flag
            if not flag:
                m.last_attn = None


def build_model(cfg=None, dtype=torch.float32):
    """Seeded construction; identical configs give identical weights."""
    cfg = cfg or FSENetConfig()
    gen_state = torch.random.get_rng_state()
    torch.manual_seed(cfg.seed)
    try:
        model = FSENet(cfg)
        if cfg.identity_init:
            model.identity_init()
    finally:
        torch.random.set_rng_state(gen_state)
    return model.to(dtype)


def count_parameters(obj):
    """Total scalar parameter count of a module or a name -> array mapping."""
    if isinstance(obj, nn.Module):
        return sum(p.numel() for p in obj.parameters())
    if isinstance(obj, Mapping):
        return int(sum(int(np.prod(np.shape(v))) for v in obj.values()))
    raise TypeError(f"cannot count parameters of {type(obj).__name__}")


def image_to_tensor(img, dtype=torch.float32):
    img = as_image(img)
    if img.shape[2] != 3:
        raise StructureError("model input must have 3 channels")
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))).to(dtype)[None]


def tensor_to_image(t):
    return t[0].detach().to(torch.float64).permute(1, 2, 0).cpu().numpy()


@torch.no_grad()
def restore_image(model, img, max_side=None, clamp=True):
    """Apply ``model`` to an (H, W, 3) array and return an (H, W, 3) array.

    With ``max_side`` the input is first shrunk so its longer side fits, and
    the result is resized back to the original size.
    """
    img = as_image(img)
    h, w = img.shape[:2]
    work = img
    if max_side:
        nh, nw = fit_max_side(h, w, max_side)
        if (nh, nw) != (h, w):
            work = resize_bilinear(img, nh, nw)
    dtype = next(model.parameters()).dtype
    out = tensor_to_image(model(image_to_tensor(work, dtype), clamp=clamp))
    if out.shape[:2] != (h, w):
        out = resize_bilinear(out, h, w)
        if clamp:
            out = np.clip(out, 0.0, 1.0)
    return out
