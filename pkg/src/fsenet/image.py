"""Image arrays, 8-bit file I/O, reflect padding and bilinear resampling.

Images are plain ``numpy`` arrays of shape (H, W, C) with C in {1, 3} and
float values nominally in [0, 1]. Quantisation to 8 bits happens only when
reading or writing files.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import kernels
from .errors import ImageFormatError, StructureError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def as_image(arr):
    """Validate and return ``arr`` as a float64 (H, W, C) array.

    2-D input is promoted to a single channel.
    """
    a = np.asarray(arr, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[0] < 1 or a.shape[1] < 1 or a.shape[2] not in (1, 3):
        raise StructureError(f"expected (H, W, 1|3) image, got shape {np.shape(arr)}")
    return a


def load_image(path, mode="RGB"):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I;16L", "I", "F") or im.mode.startswith("I;16"):
                raise ImageFormatError(f"{path}: unsupported bit depth (mode {im.mode})")
            im = im.convert(mode)
            data = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise ImageFormatError(f"{path}: cannot decode image ({exc})") from exc
    return as_image(data.astype(np.float64) / 255.0)


def load_mask(path):
    """Load a mask file as a binary (H, W, 1) array (nonzero pixel -> 1)."""
    m = load_image(path, mode="L")
    return (m > 0.5).astype(np.float64)


def to_uint8(img):
    img = as_image(img)
    return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)


def save_image(path, img):
    """Write ``img`` as 8-bit PNG or JPEG; the suffix picks the codec."""
    path = Path(path)
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise ImageFormatError(f"{path}: unsupported suffix {path.suffix!r}")
    data = to_uint8(img)
    data = data[:, :, 0] if data.shape[2] == 1 else data
    path.parent.mkdir(parents=True, exist_ok=True)
    kwargs = {"quality": 95} if path.suffix.lower() != ".png" else {}
    Image.fromarray(data).save(path, **kwargs)


def list_images(directory):
    directory = Path(directory)
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass(frozen=True)
class PadSpec:
    top: int
    bottom: int
    left: int
    right: int
    mode: str = "reflect"

    @property
    def is_zero(self):
        return not (self.top or self.bottom or self.left or self.right)


def pad_amounts(h, w, factor):
    if factor < 1:
        raise ValueError("factor must be >= 1")
    ph = -h % factor
    pw = -w % factor
    return ph // 2, ph - ph // 2, pw // 2, pw - pw // 2


def pad_to_multiple(img, factor):
    """Reflect-pad so both sides become multiples of ``factor``.

    Padding is split as evenly as possible, the extra pixel going to the
    bottom/right. Axes of length 1 cannot mirror and are replicated instead.
    Returns the padded image and the :class:`PadSpec` needed by :func:`crop`.
    """
    img = as_image(img)
    h, w, _ = img.shape
    top, bottom, left, right = pad_amounts(h, w, factor)
    mode = "reflect" if min(h, w) >= 2 else "replicate"
    spec = PadSpec(top, bottom, left, right, mode)
    if spec.is_zero:
        return img.copy(), spec
    rows = kernels.reflect_index(h, max(top, bottom))[max(top, bottom) - top :][: h + top + bottom]
    cols = kernels.reflect_index(w, max(left, right))[max(left, right) - left :][: w + left + right]
    return img[rows][:, cols], spec


def crop(img, spec):
    """Undo :func:`pad_to_multiple`."""
    h, w = img.shape[0], img.shape[1]
    return img[spec.top : h - spec.bottom, spec.left : w - spec.right]


def resize_bilinear(img, new_h, new_w, backend=None):
    if new_h < 1 or new_w < 1:
        raise ValueError(f"target size must be positive, got {new_h}x{new_w}")
    return kernels.resize(as_image(img), int(new_h), int(new_w), backend=backend)


def fit_max_side(h, w, max_side):
    """Size (h', w') whose longer side is at most ``max_side``, aspect kept."""
    scale = max_side / max(h, w)
    if scale >= 1.0:
        return h, w
    return max(1, round(h * scale)), max(1, round(w * scale))
