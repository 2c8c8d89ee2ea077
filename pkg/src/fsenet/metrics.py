"""PSNR / SSIM / RMSE and per-directory evaluation.

Aggregates are always the mean of per-image values. Because of that, the
mean PSNR and mean RMSE of a report generally do not satisfy the
single-image identity ``psnr = 20 log10(255 / rmse)``.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import StructureError
from .image import as_image, list_images, load_image
from .model.loss import SSIM_C1, SSIM_C2, gaussian_window

log = logging.getLogger(__name__)

METRIC_KEYS = ("psnr", "ssim", "rmse", "seconds")


def _pair(pred, target):
    p, t = as_image(pred), as_image(target)
    if p.shape != t.shape:
        raise StructureError(f"shape mismatch {p.shape} vs {t.shape}")
    return p, t


def mse(pred, target):
    p, t = _pair(pred, target)
    return float(np.mean((p - t) ** 2))


def psnr(pred, target):
    m = mse(pred, target)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / m)


def rmse(pred, target, colorspace="rgb"):
    """Root mean squared error on the 0-255 scale (or in CIE Lab)."""
    p, t = _pair(pred, target)
    if colorspace == "lab":
        from skimage.color import rgb2lab

        return float(np.sqrt(np.mean((rgb2lab(p) - rgb2lab(t)) ** 2)))
    if colorspace != "rgb":
        raise ValueError(f"unknown colorspace {colorspace!r}")
    return float(np.sqrt(np.mean((255.0 * p - 255.0 * t) ** 2)))


def ssim(pred, target, backend=None):
    p, t = _pair(pred, target)
    n = 11
    if min(p.shape[:2]) < n:
        raise StructureError(f"SSIM needs both sides >= {n}, got {p.shape[:2]}")
    g = gaussian_window(n)
    scores = []
    for c in range(p.shape[2]):
        x, y = p[:, :, c], t[:, :, c]

        def filt(a):
            return kernels.filter_valid(a, g, backend=backend)

        mu_x, mu_y = filt(x), filt(y)
        sxx = filt(x * x) - mu_x**2
        syy = filt(y * y) - mu_y**2
        sxy = filt(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + SSIM_C1) * (2 * sxy + SSIM_C2)
        den = (mu_x**2 + mu_y**2 + SSIM_C1) * (sxx + syy + SSIM_C2)
        scores.append(num / den)
    return float(np.mean(scores))


@dataclass
class MetricReport:
    rows: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def add(self, name, psnr, ssim, rmse, seconds=None):
        self.rows.append({"name": name, "psnr": psnr, "ssim": ssim, "rmse": rmse, "seconds": seconds})

    @property
    def mean(self):
        out = {}
        for key in METRIC_KEYS:
            vals = [r[key] for r in self.rows if r[key] is not None]
            out[key] = float(np.mean(vals)) if vals else None
        return out

    def to_dict(self):
        return {"rows": [_jsonable(r) for r in self.rows], "mean": _jsonable(self.mean)}

    def to_json(self, path=None, **extra):
        d = self.to_dict()
        d.update(extra)
        text = json.dumps(d, indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    def table(self):
        header = ("name", "PSNR", "SSIM", "RMSE", "time(s)")
        lines = [[r["name"], *(_fmt(r[k]) for k in METRIC_KEYS)] for r in self.rows]
        lines.append(["mean", *(_fmt(self.mean[k]) for k in METRIC_KEYS)])
        widths = [max(len(str(x)) for x in col) for col in zip(header, *lines)]
        out = []
        for i, row in enumerate([header, *lines]):
            if i == len(lines):
                out.append("-" * (sum(widths) + 2 * (len(widths) - 1)))
            out.append("  ".join(str(v).ljust(w) if j == 0 else str(v).rjust(w) for j, (v, w) in enumerate(zip(row, widths))))
        return "\n".join(out)


def _fmt(v):
    if v is None:
        return "-"
    if math.isinf(v):
        return "inf"
    return f"{v:.4f}"


def _jsonable(d):
    return {k: ("inf" if isinstance(v, float) and math.isinf(v) else v) for k, v in d.items()}


def evaluate_pairs(pairs, timings=None, colorspace="rgb"):
    """``pairs`` yields (name, pred, target) arrays."""
    timings = timings or {}
    report = MetricReport()
    for name, p, t in pairs:
        if p.shape != t.shape:
            msg = f"{name}: prediction {p.shape} and target {t.shape} differ; skipped"
            log.warning(msg)
            report.warnings.append(msg)
            continue
        report.add(name, psnr(p, t), ssim(p, t), rmse(p, t, colorspace), timings.get(name))
    return report


def evaluate_dir(pred_dir, target_dir, timings=None, colorspace="rgb"):
    """Per-image metrics for files whose stems match across the two directories."""
    preds = {p.stem: p for p in list_images(pred_dir)}
    targets = {p.stem: p for p in list_images(target_dir)}
    warnings = []
    for stem in sorted(set(preds) ^ set(targets)):
        side = "target" if stem in preds else "prediction"
        msg = f"{stem}: no matching {side}; skipped"
        log.warning(msg)
        warnings.append(msg)

    def pairs():
        for stem in sorted(set(preds) & set(targets)):
            yield stem, load_image(preds[stem]), load_image(targets[stem])

    t0 = time.perf_counter()
    report = evaluate_pairs(pairs(), timings, colorspace)
    log.debug("evaluated %d images in %.2fs", len(report.rows), time.perf_counter() - t0)
    report.warnings = warnings + report.warnings
    return report
