"""Laplacian pyramid on numpy images (5x5 binomial kernel, mirror borders).

``decompose`` and ``reconstruct`` are exact inverses up to float rounding:
each band stores precisely what ``pyr_up`` fails to restore, so adding it
back recovers the finer level.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import StructureError
from .image import as_image


@dataclass
class LaplacianStack:
    """High-frequency bands finest-first plus the low-frequency base.

    ``highs[i]`` has shape (H / 2**i, W / 2**i, C); ``low`` is (H / 2**D, W / 2**D, C).
    """

    highs: list
    low: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def depth(self):
        return len(self.highs)

    def validate(self):
        if not self.highs:
            raise StructureError("stack needs at least one high band")
        levels = list(self.highs) + [self.low]
        for fine, coarse in zip(levels[:-1], levels[1:]):
            if fine.shape[0] != 2 * coarse.shape[0] or fine.shape[1] != 2 * coarse.shape[1]:
                raise StructureError(
                    f"band {fine.shape[:2]} is not twice the size of {coarse.shape[:2]}"
                )
            if fine.shape[2] != coarse.shape[2]:
                raise StructureError("channel count differs between bands")


def pyr_down(img, backend=None):
    img = as_image(img)
    h, w, _ = img.shape
    if h % 2 or w % 2:
        raise StructureError(f"pyr_down needs even dims, got {h}x{w}; pad first")
    return kernels.blur_decimate(img, backend=backend)


def pyr_up(img, backend=None):
    return kernels.upsample_blur(as_image(img), backend=backend)


def decompose(img, depth=2, backend=None):
    img = as_image(img)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    h, w, _ = img.shape
    f = 2**depth
    if h % f or w % f:
        raise StructureError(f"{h}x{w} is not divisible by 2**{depth}; pad first")
    highs = []
    cur = img
    for _ in range(depth):
        down = pyr_down(cur, backend=backend)
        highs.append(cur - pyr_up(down, backend=backend))
        cur = down
    return LaplacianStack(highs=highs, low=cur)


def reconstruct(stack, backend=None):
    stack.validate()
    cur = as_image(stack.low)
    for band in reversed(stack.highs):
        cur = pyr_up(cur, backend=backend) + band
    return cur


def band_to_display(band):
    """Map a zero-centred high band into [0, 1] for viewing (0.5 + band / 2)."""
    return np.clip(0.5 + np.asarray(band) / 2.0, 0.0, 1.0)
