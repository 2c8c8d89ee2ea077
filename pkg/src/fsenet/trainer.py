"""Optimisation loop, checkpoint/resume, and batch inference."""

import csv
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import yaml

from . import checkpoint as ckpt_io
from .data import ALPHA_RANGE, load_triplet, training_batch, write_json
from .errors import ConfigError, TrainingDiverged
from .image import IMAGE_SUFFIXES, list_images, load_image, save_image
from .metrics import MetricReport, psnr, rmse, ssim
from .model import FSENetConfig, build_model, restore_image, total_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "loss", "l1", "ssim_term", "lr", "sec_per_step")


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 4
    crop_size: int = 512
    lr: float = 2e-4
    lr_min: float = 1e-6
    betas: tuple = (0.9, 0.999)
    grad_clip: float = 1.0
    synth_prob: float = 0.5
    alpha_range: tuple = ALPHA_RANGE
    val_every: int = 0
    val_max_images: int = 16
    val_max_side: int = 0
    ckpt_every: int = 0
    prefetch: int = 2
    threads: int = 0
    deterministic: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.alpha_range = tuple(float(a) for a in self.alpha_range)
        if self.steps < 1 or self.batch_size < 1 or self.crop_size < 1:
            raise ConfigError("steps, batch_size and crop_size must be >= 1")
        lo, hi = self.alpha_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ConfigError(f"alpha_range must satisfy 0 <= lo <= hi <= 1, got {self.alpha_range}")
        if not 0.0 <= self.synth_prob <= 1.0:
            raise ConfigError("synth_prob must lie in [0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["betas"] = list(self.betas)
        d["alpha_range"] = list(self.alpha_range)
        return d


def _field_names(cls):
    return {f.name for f in fields(cls)}


def _coerce(value, default):
    # YAML 1.1 reads "5e-4" as a string; follow the type of the default
    if isinstance(value, str) and isinstance(default, (int, float)) and not isinstance(default, bool):
        try:
            return type(default)(float(value)) if isinstance(default, float) else int(value)
        except ValueError as exc:
            raise ConfigError(f"cannot read {value!r} as a number") from exc
    return value


def load_config(path=None, env=None, **overrides):
    """Read a flat YAML key/value file into (FSENetConfig, TrainConfig).

    ``FSENET_<KEY>`` environment variables override file values, and keyword
    ``overrides`` win over both. Values from the environment are parsed as
    YAML scalars/lists, so ``FSENET_TRM_DILATIONS="[1, 2]"`` works.
    """
    env = os.environ if env is None else env
    raw = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"no such config file: {path}")
        raw = yaml.safe_load(path.read_text()) or {}
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a key/value mapping")
    model_keys, train_keys = _field_names(FSENetConfig), _field_names(TrainConfig)
    defaults = {**TrainConfig().to_dict(), **FSENetConfig().to_dict()}
    unknown = set(raw) - model_keys - train_keys
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in sorted(model_keys | train_keys):
        var = f"FSENET_{key.upper()}"
        if var in env:
            raw[key] = yaml.safe_load(env[var])
    raw.update(overrides)
    raw = {k: _coerce(v, defaults[k]) for k, v in raw.items()}
    model_cfg = FSENetConfig(**{k: v for k, v in raw.items() if k in model_keys})
    train_cfg = TrainConfig(**{k: v for k, v in raw.items() if k in train_keys})
    return model_cfg, train_cfg


def config_hash(model_cfg, train_cfg=None):
    payload = {"model": model_cfg.to_dict(), "train": train_cfg.to_dict() if train_cfg else None}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cosine_lr(step, total, lr_max, lr_min):
    if total <= 1:
        return lr_max
    t = min(step, total - 1) / (total - 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t))


# --------------------------------------------------------------------------
# deterministic batch schedule
# --------------------------------------------------------------------------


def epoch_order(seed, epoch, n):
    return np.random.default_rng([seed, 7919, epoch]).permutation(n)


def batch_indices(seed, step, batch_size, n):
    """Record indices for ``step``: consecutive slices of per-epoch permutations."""
    out = []
    for j in range(batch_size):
        pos = step * batch_size + j
        out.append(int(epoch_order(seed, pos // n, n)[pos % n]))
    return out


def make_batch(index, train_cfg, seed, step):
    rng = np.random.default_rng([seed, step])
    idx = batch_indices(seed, step, train_cfg.batch_size, len(index))
    return idx, training_batch(index, train_cfg, rng, indices=idx)


class Prefetcher:
    """Builds batches ahead of time on a worker thread.

    Each batch depends only on (seed, step), so results do not depend on
    thread timing.
    """

    def __init__(self, index, train_cfg, seed, steps, depth=2):
        self.index, self.cfg, self.seed = index, train_cfg, seed
        self.steps = list(steps)
        self.depth = max(0, depth)
        self.pool = ThreadPoolExecutor(max_workers=1) if self.depth else None
        self.pending = {}
        self.cursor = 0

    def _fill(self):
        while self.pool and self.cursor < len(self.steps) and len(self.pending) < self.depth:
            s = self.steps[self.cursor]
            self.pending[s] = self.pool.submit(make_batch, self.index, self.cfg, self.seed, s)
            self.cursor += 1

    def get(self, step):
        if not self.pool:
            return make_batch(self.index, self.cfg, self.seed, step)
        self._fill()
        fut = self.pending.pop(step, None)
        result = fut.result() if fut else make_batch(self.index, self.cfg, self.seed, step)
        self._fill()
        return result

    def close(self):
        if self.pool:
            self.pool.shutdown(wait=False, cancel_futures=True)


# --------------------------------------------------------------------------
# state save / load
# --------------------------------------------------------------------------


@dataclass
class TrainState:
    step: int = 0
    epoch: int = 0
    seed: int = 0
    best_val: dict = field(default_factory=dict)
    train_config: dict = field(default_factory=dict)


def save_state(path, model, opt, state):
    extra = {}
    names = dict(model.named_parameters())
    for name, p in names.items():
        st = opt.state.get(p)
        if st:
            extra[f"optim.exp_avg.{name}"] = st["exp_avg"]
            extra[f"optim.exp_avg_sq.{name}"] = st["exp_avg_sq"]
    ckpt_io.save_model(path, model, meta=asdict(state), extra=extra)


def load_state(path, model, opt):
    tensors, config, meta = ckpt_io.read_archive(path)
    if config != model.cfg.to_dict():
        raise ckpt_io.CheckpointError(f"{path}: model config differs from the run configuration")
    ckpt_io.load_state_into(model, tensors)
    state = TrainState(**meta)
    for name, p in model.named_parameters():
        key = f"optim.exp_avg.{name}"
        if key in tensors:
            opt.state[p] = {
                "step": torch.tensor(float(state.step)),
                "exp_avg": torch.from_numpy(tensors[key]).to(p.dtype),
                "exp_avg_sq": torch.from_numpy(tensors[f"optim.exp_avg_sq.{name}"]).to(p.dtype),
            }
    return state


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def _to_tensor(batch):
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).float()


def validate(model, index, train_cfg):
    report = MetricReport()
    model.eval()
    for rec in index.records[: train_cfg.val_max_images]:
        s = load_triplet(rec, need_mask=False)
        out = restore_image(model, s.shadow, max_side=train_cfg.val_max_side or None)
        report.add(rec.name, psnr(out, s.target), ssim(out, s.target) if min(out.shape[:2]) >= 11 else None, rmse(out, s.target))
    model.train()
    return report


@dataclass
class TrainResult:
    out_dir: Path
    history: list
    state: TrainState
    model: object


def train(model_cfg, train_cfg, index, out_dir, val_index=None, resume=None, stop_at=None):
    """Run (or continue) training; writes ``loss.csv``, ``last.ckpt``, ``best.ckpt``.

    ``stop_at`` ends the run early at that step (the cosine schedule still
    spans ``train_cfg.steps``); used to produce resumable intermediate states.
    """
    if len(index) == 0:
        raise ConfigError("training index is empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if train_cfg.threads:
        torch.set_num_threads(train_cfg.threads)
    if train_cfg.deterministic:
        torch.use_deterministic_algorithms(True, warn_only=True)

    model = build_model(model_cfg)
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=train_cfg.lr, betas=train_cfg.betas)
    state = TrainState(seed=model_cfg.seed, train_config=train_cfg.to_dict())
    if resume is not None:
        state = load_state(resume, model, opt)
        log.info("resumed from %s at step %d", resume, state.step)

    log_path = out_dir / "loss.csv"
    history = []
    if resume is not None and log_path.is_file():
        with open(log_path, newline="") as fh:
            history = [r for r in csv.DictReader(fh) if int(r["step"]) < state.step]
    with open(log_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        writer.writerows(history)

    end = train_cfg.steps if stop_at is None else min(stop_at, train_cfg.steps)
    n = len(index)
    prefetch = Prefetcher(index, train_cfg, model_cfg.seed, range(state.step, end), train_cfg.prefetch)
    fh = open(log_path, "a", newline="")
    writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
    try:
        for step in range(state.step, end):
            t0 = time.perf_counter()
            lr = cosine_lr(step, train_cfg.steps, train_cfg.lr, train_cfg.lr_min)
            for g in opt.param_groups:
                g["lr"] = lr
            idx, batch = prefetch.get(step)
            pred = model(_to_tensor(batch.inputs), clamp=False)
            loss, l1, s_term = total_loss(pred, _to_tensor(batch.targets), model_cfg.lambda_ssim)
            if not torch.isfinite(loss):
                dump = {"step": step, "indices": idx, "names": batch.names, "loss": loss.item()}
                write_json(out_dir / "nan_dump.json", dump)
                raise TrainingDiverged(f"non-finite loss at step {step}; batch indices {idx} (see nan_dump.json)")
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if train_cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            opt.step()
            row = {
                "step": step,
                "loss": repr(loss.item()),
                "l1": repr(l1.item()),
                "ssim_term": repr(s_term.item()),
                "lr": repr(lr),
                "sec_per_step": f"{time.perf_counter() - t0:.4f}",
            }
            writer.writerow(row)
            fh.flush()
            history.append(row)
            state.step = step + 1
            state.epoch = (state.step * train_cfg.batch_size) // n

            last = state.step == train_cfg.steps
            if val_index is not None and len(val_index) and (
                (train_cfg.val_every and state.step % train_cfg.val_every == 0) or last
            ):
                rep = validate(model, val_index, train_cfg)
                summary = {"step": state.step, **rep.mean}
                log.info("step %d validation: %s", state.step, summary)
                if not state.best_val or summary["rmse"] < state.best_val["rmse"]:
                    state.best_val = summary
                    save_state(out_dir / "best.ckpt", model, opt, state)
            if train_cfg.ckpt_every and state.step % train_cfg.ckpt_every == 0:
                save_state(out_dir / "last.ckpt", model, opt, state)
    finally:
        fh.close()
        prefetch.close()
    save_state(out_dir / "last.ckpt", model, opt, state)
    return TrainResult(out_dir, history, state, model)


def read_loss_log(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# --------------------------------------------------------------------------
# inference
# --------------------------------------------------------------------------


def infer(ckpt_path, input_path, out_dir, max_side=None, model=None):
    """Restore one image or every image in a directory.

    Outputs are PNGs named after the input stems. Returns
    ``[(name, out_path, seconds), ...]``.
    """
    if model is None:
        model, _ = ckpt_io.load_model(ckpt_path)
    input_path = Path(input_path)
    if input_path.is_dir():
        files = list_images(input_path)
    elif input_path.is_file() and input_path.suffix.lower() in IMAGE_SUFFIXES:
        files = [input_path]
    else:
        raise FileNotFoundError(f"no input image(s) at {input_path}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for f in files:
        img = load_image(f)
        t0 = time.perf_counter()
        out = restore_image(model, img, max_side=max_side)
        dt = time.perf_counter() - t0
        dest = out_dir / f"{f.stem}.png"
        save_image(dest, out)
        log.info("%s: %dx%d in %.3fs", f.name, img.shape[0], img.shape[1], dt)
        results.append((f.stem, dest, dt))
    return results
