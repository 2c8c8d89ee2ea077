"""Training objective: SmoothL1 + lambda * (1 - SSIM)."""

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import StructureError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


def smooth_l1(pred, target, beta=1.0):
    return F.smooth_l1_loss(pred, target, beta=beta, reduction="mean")


def ssim_torch(pred, target):
    """Mean SSIM over valid 11x11 Gaussian windows and channels (unit range).

    Patches smaller than the window use one window as large as the short side.
    """
    c = pred.shape[1]
    size = min(SSIM_WINDOW, *pred.shape[-2:])
    g = torch.as_tensor(gaussian_window(size), dtype=pred.dtype, device=pred.device)
    win = torch.outer(g, g).expand(c, 1, size, size)

    def filt(t):
        return F.conv2d(t, win, groups=c)

    mu_x, mu_y = filt(pred), filt(target)
    sxx = filt(pred * pred) - mu_x**2
    syy = filt(target * target) - mu_y**2
    sxy = filt(pred * target) - mu_x * mu_y
    num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
    den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
    return (num / den).mean()


def total_loss(pred, target, lam=0.4):
    """Returns ``(total, smooth_l1_term, ssim_term)`` where ssim_term = 1 - SSIM."""
    if pred.shape != target.shape:
        raise StructureError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    l1 = smooth_l1(pred, target)
    if lam == 0:
        s = torch.zeros((), dtype=pred.dtype, device=pred.device)
    else:
        s = 1.0 - ssim_torch(pred, target)
    return l1 + lam * s, l1, s


def loss_and_grad(pred, target, lam=0.4):
    """Numpy convenience: loss value and d(loss)/d(pred) for (H, W, C) images."""
    p = torch.tensor(np.asarray(pred, dtype=np.float64).transpose(2, 0, 1)[None], requires_grad=True)
    t = torch.tensor(np.asarray(target, dtype=np.float64).transpose(2, 0, 1)[None])
    if p.shape != t.shape:
        raise StructureError("pred and target differ in shape")
    value, _, _ = total_loss(p, t, lam)
    value.backward()
    return value.item(), p.grad[0].permute(1, 2, 0).numpy()
