"""Frequency-aware document shadow removal."""

from ._accel import backend_name
from .image import load_image, pad_to_multiple, resize_bilinear, save_image
from .pyramid import LaplacianStack, decompose, reconstruct

__version__ = "0.1.0"

__all__ = [
    "LaplacianStack",
    "backend_name",
    "decompose",
    "load_image",
    "pad_to_multiple",
    "reconstruct",
    "resize_bilinear",
    "save_image",
]
