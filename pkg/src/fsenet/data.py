"""Dataset layout, mask extraction, shadow synthesis and batch sampling.

Expected layout::

    root/{train,test}/input/NAME.png    shadowed photo
    root/{train,test}/target/NAME.png   shadow-free photo
    root/{train,test}/mask/NAME.png     optional, 0/255 single channel
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy import ndimage

from .errors import ParameterError, StructureError
from .image import as_image, list_images, load_image, load_mask, resize_bilinear, save_image

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
ALPHA_RANGE = (0.2, 0.7)


@dataclass
class SampleTriplet:
    shadow: np.ndarray
    target: np.ndarray
    mask: Optional[np.ndarray] = None
    name: str = ""

    def __post_init__(self):
        self.shadow = as_image(self.shadow)
        self.target = as_image(self.target)
        if self.shadow.shape != self.target.shape:
            raise StructureError(f"{self.name}: shadow {self.shadow.shape} != target {self.target.shape}")
        if self.mask is not None:
            self.mask = as_image(self.mask)
            if self.mask.shape[:2] != self.shadow.shape[:2]:
                raise StructureError(f"{self.name}: mask size differs from image size")
            if not np.isin(self.mask, (0.0, 1.0)).all():
                raise StructureError(f"{self.name}: mask must be binary")


class Record(NamedTuple):
    name: str
    input: Path
    target: Path
    mask: Optional[Path]


@dataclass
class DatasetIndex:
    root: Path
    split: str
    records: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def report(self):
        return {
            "root": str(self.root),
            "split": self.split,
            "records": len(self.records),
            "masks": sum(r.mask is not None for r in self.records),
            "warnings": list(self.warnings),
        }


def scan_dataset(root, split="train"):
    root = Path(root)
    base = root / split
    in_dir, tgt_dir, mask_dir = base / "input", base / "target", base / "mask"
    for d in (in_dir, tgt_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"missing dataset directory: {d}")
    inputs = {p.stem: p for p in list_images(in_dir)}
    targets = {p.stem: p for p in list_images(tgt_dir)}
    masks = {p.stem: p for p in list_images(mask_dir)} if mask_dir.is_dir() else {}
    index = DatasetIndex(root=root, split=split)
    for stem in sorted(set(inputs) | set(targets)):
        if stem not in inputs or stem not in targets:
            missing = "input" if stem not in inputs else "target"
            index.warnings.append(f"{stem}: missing {missing}; record excluded")
            continue
        index.records.append(Record(stem, inputs[stem], targets[stem], masks.get(stem)))
    for w in index.warnings:
        log.warning(w)
    return index


def luminance(img):
    img = as_image(img)
    if img.shape[2] == 1:
        return img[:, :, 0]
    return img @ LUMA


def disc(radius):
    r = np.arange(-radius, radius + 1)
    return (r[:, None] ** 2 + r[None, :] ** 2) <= radius**2


def extract_mask(shadow, target, tau=0.85, radius=2, eps=1e-6):
    """Binary shadow mask from the luminance ratio shadow / target.

    Pixels darker than ``tau`` times their shadow-free value are marked, then
    the mask is opened and closed with a disc (diameter ``2 * radius + 1``).
    Borders replicate, so a clean half-plane survives unchanged.
    """
    ratio = luminance(shadow) / np.maximum(luminance(target), eps)
    m = (ratio < tau).astype(np.uint8)
    fp = disc(radius)
    m = ndimage.maximum_filter(ndimage.minimum_filter(m, footprint=fp, mode="nearest"), footprint=fp, mode="nearest")
    m = ndimage.minimum_filter(ndimage.maximum_filter(m, footprint=fp, mode="nearest"), footprint=fp, mode="nearest")
    return m.astype(np.float64)[:, :, None]


def synthesize_shadow(target, mask, alpha):
    """Darken ``target`` under ``mask``: ``target * (1 - alpha * mask)``."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must lie in [0, 1], got {alpha}")
    target = as_image(target)
    mask = as_image(mask)
    if mask.shape[:2] != target.shape[:2]:
        raise StructureError("mask and target differ in size")
    return target * (1.0 - alpha * mask)


def sample_alpha(rng, low=ALPHA_RANGE[0], high=ALPHA_RANGE[1]):
    return float(rng.uniform(low, high))


# --------------------------------------------------------------------------
# loading + batches
# --------------------------------------------------------------------------


@lru_cache(maxsize=64)
def _cached_image(path):
    img = load_image(path)
    img.setflags(write=False)
    return img


@lru_cache(maxsize=64)
def _cached_mask(path):
    m = load_mask(path)
    m.setflags(write=False)
    return m


def load_triplet(record, need_mask=True):
    shadow = _cached_image(str(record.input))
    target = _cached_image(str(record.target))
    if record.mask is not None:
        mask = _cached_mask(str(record.mask))
    elif need_mask:
        mask = extract_mask(shadow, target)
    else:
        mask = None
    return SampleTriplet(shadow, target, mask, record.name)


class Batch(NamedTuple):
    inputs: np.ndarray  # (B, h, w, 3)
    targets: np.ndarray
    names: list


def _ensure_min_side(s, crop):
    h, w = s.shadow.shape[:2]
    if min(h, w) >= crop:
        return s
    scale = crop / min(h, w)
    nh, nw = max(crop, round(h * scale)), max(crop, round(w * scale))
    mask = None
    if s.mask is not None:
        mask = (resize_bilinear(s.mask, nh, nw) >= 0.5).astype(np.float64)
    return SampleTriplet(resize_bilinear(s.shadow, nh, nw), resize_bilinear(s.target, nh, nw), mask, s.name)


def augment_sample(s, crop, rng, synth_prob=0.5, alpha_range=ALPHA_RANGE, flip=True):
    """Random crop (same window for every member), flip and optional re-synthesis.

    Draw order from ``rng`` is fixed: y0, x0, flip, synth, alpha.
    """
    s = _ensure_min_side(s, crop)
    h, w = s.shadow.shape[:2]
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    sl = (slice(y0, y0 + crop), slice(x0, x0 + crop))
    shadow, target = s.shadow[sl], s.target[sl]
    mask = s.mask[sl] if s.mask is not None else None
    if flip and rng.random() < 0.5:
        shadow, target = shadow[:, ::-1], target[:, ::-1]
        mask = mask[:, ::-1] if mask is not None else None
    if rng.random() < synth_prob and mask is not None:
        shadow = synthesize_shadow(target, mask, sample_alpha(rng, *alpha_range))
    return np.ascontiguousarray(shadow), np.ascontiguousarray(target)


def training_batch(index, cfg, rng, indices=None):
    """Assemble one batch of crops; ``cfg`` provides crop_size, batch_size,
    synth_prob and alpha_range. ``indices`` fixes the records (else drawn)."""
    if indices is None:
        indices = rng.integers(0, len(index), size=cfg.batch_size)
    ins, tgts, names = [], [], []
    for i in indices:
        rec = index.records[int(i)]
        s = load_triplet(rec, need_mask=cfg.synth_prob > 0)
        a, b = augment_sample(s, cfg.crop_size, rng, cfg.synth_prob, tuple(cfg.alpha_range))
        ins.append(a)
        tgts.append(b)
        names.append(rec.name)
    return Batch(np.stack(ins), np.stack(tgts), names)


# --------------------------------------------------------------------------
# statistics
# --------------------------------------------------------------------------


def corpus_stats(index, extract_missing=True, tau=0.85):
    """Shadow-area fractions (population mean/std) and a resolution histogram."""
    per_image = {}
    resolutions = Counter()
    for rec in index.records:
        target = _cached_image(str(rec.target))
        h, w = target.shape[:2]
        resolutions[f"{h}x{w}"] += 1
        if rec.mask is not None:
            mask = _cached_mask(str(rec.mask))
        elif extract_missing:
            mask = extract_mask(_cached_image(str(rec.input)), target, tau)
        else:
            continue
        per_image[rec.name] = float(mask.mean())
    report = {"split": index.split, "count": len(index.records), "resolutions": dict(sorted(resolutions.items()))}
    if per_image:
        vals = np.array(list(per_image.values()))
        report["coverage"] = {
            "per_image": per_image,
            "mean": float(vals.mean()),
            "std": float(vals.std()),
            "mean_percent": 100.0 * float(vals.mean()),
            "std_percent": 100.0 * float(vals.std()),
        }
    else:
        report["coverage"] = "unavailable"
    return report


def write_json(path, obj):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# synthetic documents (tests, smoke runs)
# --------------------------------------------------------------------------


def toy_document(size, rng):
    """Paper-coloured page with dark text-like strokes."""
    h, w = (size, size) if np.isscalar(size) else size
    paper = rng.uniform(0.82, 0.97, size=3)
    img = np.ones((h, w, 3)) * paper
    ink = rng.uniform(0.05, 0.3, size=3)
    line_h = max(3, h // 24)
    y = line_h
    while y + line_h < h - line_h:
        x = int(rng.integers(2, max(3, w // 10)))
        while x < w - 4:
            word = int(rng.integers(3, max(4, w // 8)))
            stroke = max(1, line_h // 2)
            img[y : y + stroke, x : min(w - 2, x + word)] = ink
            x += word + int(rng.integers(2, max(3, w // 30)))
        y += 2 * line_h
    return img


def toy_mask(size, rng):
    """Smooth blob covering roughly 20-60 % of the frame."""
    h, w = (size, size) if np.isscalar(size) else size
    yy, xx = np.mgrid[0:h, 0:w] / np.array([h, w]).reshape(2, 1, 1)
    cy, cx = rng.uniform(0.2, 0.8, size=2)
    ry, rx = rng.uniform(0.3, 0.55, size=2)
    theta = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    wobble = 1.0 + 0.15 * np.sin(6 * np.arctan2(v, u) + rng.uniform(0, 2 * np.pi))
    return ((u / rx) ** 2 + (v / ry) ** 2 < wobble).astype(np.float64)[:, :, None]


def toy_triplets(n=8, size=256, seed=0, alpha_range=ALPHA_RANGE):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        target = toy_document(size, rng)
        mask = toy_mask(size, rng)
        shadow = synthesize_shadow(target, mask, sample_alpha(rng, *alpha_range))
        out.append(SampleTriplet(shadow, target, mask, f"doc{i:04d}"))
    return out


def write_toy_dataset(root, n=8, size=256, seed=0, split="train"):
    base = Path(root) / split
    for t in toy_triplets(n, size, seed):
        save_image(base / "input" / f"{t.name}.png", t.shadow)
        save_image(base / "target" / f"{t.name}.png", t.target)
        save_image(base / "mask" / f"{t.name}.png", t.mask)
    return scan_dataset(root, split)
