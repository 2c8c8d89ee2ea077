"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL/SKIP line that is printed in the
"acceptance criteria" section of the pytest summary. Criterion 13 needs the
real dataset: point ``FSENET_SD7K_ROOT`` at a directory holding
``train/`` and ``test/`` in the usual input/target/mask layout.
"""

import math
import os
import time

import numpy as np
import pytest
import torch

from fsenet import checkpoint as ckpt_io
from fsenet import pyramid
from fsenet.data import (
    corpus_stats,
    load_triplet,
    sample_alpha,
    scan_dataset,
    synthesize_shadow,
    write_toy_dataset,
)
from fsenet.image import load_image, save_image
from fsenet.metrics import psnr, rmse, ssim
from fsenet.model import FSENetConfig, build_model, loss_and_grad, restore_image, toy_config
from fsenet.model.highfreq import TRM, ContourExpander, ContourNet, gate_band
from fsenet.model.lowfreq import SCA, DFEUNet, TAABlock, simple_gate
from fsenet.trainer import TrainConfig, infer, read_loss_log, train
from helpers import criterion, fd_rel_error, randomize_
from test_metrics import brute_ssim


def _seeded(cls, *args, **kw):
    torch.manual_seed(0)
    return cls(*args, **kw)


def test_c01_pyramid_lossless():
    with criterion(1, "pyramid losslessness, 50 images, D in {1,2,3}", 10):
        rng = np.random.default_rng(1)
        worst = 0.0
        for i in range(50):
            depth = (1, 2, 3)[i % 3]
            f = 2**depth
            h, w = (int(v) // f * f for v in rng.integers(64, 513, size=2))
            img = rng.random((h, w, 3))
            worst = max(worst, np.abs(pyramid.reconstruct(pyramid.decompose(img, depth)) - img).max())
        assert worst < 1e-5, worst


def test_c02_constant_zero_bands():
    with criterion(2, "constant images give zero high bands", 1):
        for value, depth, size in ((0.0, 1, 64), (0.37, 2, 96), (1.0, 3, 128), (0.5, 3, 40)):
            stack = pyramid.decompose(np.full((size, size + 8, 3), value), depth)
            for band in stack.highs:
                assert np.abs(band).max() < 1e-6


def test_c03_identity_plumbing():
    with criterion(3, "identity-initialised model maps images to themselves", 30):
        model = build_model(FSENetConfig())
        rng = np.random.default_rng(3)
        with torch.no_grad():
            for _ in range(10):
                h, w = rng.integers(40, 200, size=2)
                x = torch.from_numpy(rng.random((1, 3, h, w))).float()
                assert (model(x, clamp=False) - x).abs().max() < 1e-5


def test_c04_gradient_fidelity():
    with criterion(4, "finite-difference gradients (dfe_unet, taa, contour/TRM, full toy)", 300):
        f64 = torch.float64
        errs = {}
        gen = torch.Generator().manual_seed(4)
        unet = randomize_(_seeded(DFEUNet, 4, levels=2, blocks=1).double())
        errs["dfe_unet"] = fd_rel_error(lambda v: unet(v).pow(2).sum(), torch.randn(1, 4, 8, 8, generator=gen, dtype=f64))

        taa = randomize_(_seeded(TAABlock, 4, n_layers=3).double())
        fixed = [torch.randn(1, 4, 8, 8, generator=gen, dtype=f64) for _ in range(2)]
        errs["taa_block"] = fd_rel_error(lambda v: taa([v, *fixed]).pow(2).sum(), torch.randn(1, 4, 8, 8, generator=gen, dtype=f64))

        contour = randomize_(_seeded(ContourNet, 4, 2).double())
        expander = randomize_(_seeded(ContourExpander, 4).double(), scale=0.4)
        low = torch.rand(1, 3, 8, 8, generator=gen, dtype=f64)
        band = torch.randn(1, 3, 16, 16, generator=gen, dtype=f64)
        fine = torch.randn(1, 3, 32, 32, generator=gen, dtype=f64)

        def hf_path(v):
            c = contour(low, v, band)
            return gate_band(band, c).sum() + gate_band(fine, expander(c)).pow(2).sum()

        # dense LeakyReLU/ReLU stack: a 1e-4 probe often straddles a kink, so use a
        # finer step (float64 roundoff is still ~1e-9 relative at 1e-6)
        errs["contour/TRM"] = fd_rel_error(hf_path, torch.rand(1, 3, 8, 8, generator=gen, dtype=f64), h=1e-6)

        model = randomize_(build_model(toy_config(), dtype=f64), scale=0.2)
        w = torch.randn(1, 3, 32, 32, generator=gen, dtype=f64)
        errs["full toy"] = fd_rel_error(lambda v: (model(v, clamp=False) * w).sum(), torch.rand(1, 3, 32, 32, generator=gen, dtype=f64))
        assert max(errs.values()) < 1e-3, errs


def test_c05_softmax_gate_algebra():
    with criterion(5, "softmax rows, simple_gate, SCA permutation, gate bilinearity", 60):
        model = randomize_(build_model(toy_config()), scale=0.5)
        model.keep_attention(True)
        with torch.no_grad():
            model(torch.rand(2, 3, 64, 40) * 3)
        for m in model.attention_modules():
            assert (m.last_attn.sum(-1) - 1).abs().max() < 1e-5

        x = torch.from_numpy(np.random.default_rng(0).random((1, 6, 8, 8)))
        ref = torch.empty(1, 3, 8, 8, dtype=torch.float64)
        for c in range(3):
            for i in range(8):
                for j in range(8):
                    ref[0, c, i, j] = x[0, c, i, j] * x[0, c + 3, i, j]
        assert torch.equal(simple_gate(x), ref)

        sca = _seeded(SCA, 4).double()
        x = torch.randn(1, 4, 6, 6, dtype=torch.float64)
        xp = x.reshape(1, 4, 36)[..., torch.randperm(36)].reshape(1, 4, 6, 6)
        scale = sca.fc(x.mean(dim=(2, 3), keepdim=True))
        scale_p = sca.fc(xp.mean(dim=(2, 3), keepdim=True))
        assert (scale - scale_p).abs().max() < 1e-12
        assert (sca(x) - x * scale).abs().max() < 1e-12

        rng = np.random.default_rng(5)
        for _ in range(10):
            band = torch.from_numpy(rng.normal(size=(1, 3, 8, 8)))
            contour = torch.from_numpy(rng.normal(size=(1, 1, 8, 8)))
            a, b = rng.normal(size=2)
            assert (gate_band(a * band, b * contour) - a * b * gate_band(band, contour)).abs().max() < 1e-6


def test_c06_dilated_receptive_fields():
    with criterion(6, "impulse support width 2*rate+1 for rates 1,2,4,8", 60):
        trm = _seeded(TRM, 4, dilations=(1, 2, 4, 8)).double()
        for rate, conv in zip((1, 2, 4, 8), trm.convs):
            x = torch.zeros(1, 4, 41, 41, dtype=torch.float64)
            x[..., 20, 20] = 1.0
            with torch.no_grad():
                resp = (conv(x) - conv.bias.view(1, -1, 1, 1)).abs().sum(dim=(0, 1)) > 0
            ys, xs = torch.nonzero(resp, as_tuple=True)
            assert int(ys.max() - ys.min() + 1) == 2 * rate + 1
            assert int(xs.max() - xs.min() + 1) == 2 * rate + 1


def test_c07_metric_oracles():
    with criterion(7, "PSNR/RMSE closed forms, SSIM brute force, psnr-rmse identity", 60):
        a = np.full((16, 16, 3), 0.25)
        b = a + 16 / 255
        assert abs(rmse(a, b) - 16.0) < 1e-9
        assert abs(psnr(a, b) - 20 * math.log10(255 / 16)) < 1e-9
        rng = np.random.default_rng(7)
        x, y = rng.random((32, 32, 3)), rng.random((32, 32, 3))
        assert abs(ssim(x, y) - brute_ssim(x, y)) < 1e-6
        for _ in range(20):
            x, y = rng.random((24, 24, 3)), rng.random((24, 24, 3))
            assert abs(psnr(x, y) - 20 * math.log10(255 / rmse(x, y))) < 1e-9


def test_c08_loss_contract():
    with criterion(8, "loss(t,t)=0, SmoothL1 0.5*d^2, gradient vs finite differences", 60):
        rng = np.random.default_rng(8)
        t = rng.random((16, 16, 3))
        assert loss_and_grad(t, t)[0] == 0.0
        for d in (0.1, 0.3, 0.9):
            value, _ = loss_and_grad(np.full((8, 8, 3), 0.05), np.full((8, 8, 3), 0.05 + d), lam=0.0)
            assert abs(value - 0.5 * d * d) < 1e-12
        p, t = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        _, g = loss_and_grad(p, t, 0.4)
        num = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            e = np.zeros_like(p)
            e[idx] = 1e-4
            num[idx] = (loss_and_grad(p + e, t)[0] - loss_and_grad(p - e, t)[0]) / 2e-4
        assert np.linalg.norm(g - num) / np.linalg.norm(num) < 1e-4


def test_c09_synthesis_contract():
    with criterion(9, "synthesis identity cases, never brightens, alpha in [0.2, 0.7]", 60):
        rng = np.random.default_rng(9)
        for _ in range(20):
            target = rng.random((16, 16, 3))
            mask = (rng.random((16, 16, 1)) < 0.5).astype(float)
            assert np.array_equal(synthesize_shadow(target, np.zeros_like(mask), rng.random()), target)
            assert np.array_equal(synthesize_shadow(target, mask, 0.0), target)
            assert np.all(synthesize_shadow(target, mask, rng.random()) <= target)
        alphas = np.array([sample_alpha(rng) for _ in range(10_000)])
        assert alphas.min() >= 0.2 and alphas.max() <= 0.7


@pytest.fixture(scope="module")
def overfit_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    index = write_toy_dataset(root / "data", n=8, size=256, seed=0)
    tc = TrainConfig(steps=500, batch_size=1, crop_size=256, synth_prob=0.0, lr=2e-4, lr_min=1e-6)
    t0 = time.perf_counter()
    res = train(toy_config(), tc, index, root / "run")
    elapsed = time.perf_counter() - t0
    p_in, p_out = [], []
    for rec in index.records:
        s = load_triplet(rec, need_mask=False)
        p_in.append(psnr(s.shadow, s.target))
        p_out.append(psnr(restore_image(res.model, s.shadow), s.target))
    return {"in": float(np.mean(p_in)), "out": float(np.mean(p_out)), "seconds": elapsed, "log": root / "run" / "loss.csv"}


@pytest.mark.slow
def test_c10_overfit_smoke(overfit_run):
    with criterion(10, "overfit 8 synthetic pairs, 500 steps, >= 5 dB gain", 1800) as info:
        info["note"] = (
            f"PSNR in {overfit_run['in']:.2f} dB -> out {overfit_run['out']:.2f} dB, "
            f"training {overfit_run['seconds']:.0f}s"
        )
        assert overfit_run["seconds"] < 1800, f"training took {overfit_run['seconds']:.0f}s"
        assert overfit_run["out"] - overfit_run["in"] >= 5.0, info["note"]


@pytest.mark.slow
def test_overfit_loss_smoothed_monotone(overfit_run):
    losses = np.array([float(r["loss"]) for r in read_loss_log(overfit_run["log"])])
    windows = losses[: len(losses) // 50 * 50].reshape(-1, 50).mean(axis=1)
    assert np.all(np.diff(windows) <= 0), windows


@pytest.mark.slow
def test_c11_full_resolution_shapes(tmp_path):
    with criterion(11, "2048x3072 inference keeps size; 10 arbitrary sizes preserved", 300):
        ckpt = tmp_path / "default.ckpt"
        ckpt_io.save_model(ckpt, build_model(FSENetConfig()))
        rng = np.random.default_rng(11)
        save_image(tmp_path / "in" / "page.png", rng.random((2048, 3072, 3)))
        results = infer(ckpt, tmp_path / "in" / "page.png", tmp_path / "out")
        assert load_image(results[0][1]).shape == (2048, 3072, 3)
        toy = build_model(toy_config())
        for h, w in rng.integers(17, 700, size=(10, 2)):
            img = rng.random((h, w, 3))
            assert restore_image(toy, img).shape == (h, w, 3)
            assert restore_image(toy, img, max_side=96).shape == (h, w, 3)


def _curve(path):
    return [(r["step"], r["loss"], r["l1"], r["ssim_term"], r["lr"]) for r in read_loss_log(path)]


def test_c12_determinism_and_checkpointing(tmp_path):
    with criterion(12, "fixed-seed runs identical, resume bit-identical, checkpoint byte-exact", 600):
        index = write_toy_dataset(tmp_path / "data", n=4, size=64, seed=12)
        tc = TrainConfig(steps=12, batch_size=2, crop_size=48)
        cfg = toy_config(seed=12)
        a = train(cfg, tc, index, tmp_path / "a")
        train(cfg, tc, index, tmp_path / "b")
        assert _curve(tmp_path / "a" / "loss.csv") == _curve(tmp_path / "b" / "loss.csv")

        train(cfg, tc, index, tmp_path / "c", stop_at=5)
        c = train(cfg, tc, index, tmp_path / "c", resume=tmp_path / "c" / "last.ckpt")
        assert _curve(tmp_path / "a" / "loss.csv") == _curve(tmp_path / "c" / "loss.csv")
        for k, v in a.model.state_dict().items():
            assert torch.equal(v, c.model.state_dict()[k]), k

        model, meta = ckpt_io.load_model(tmp_path / "a" / "last.ckpt")
        tensors, _, _ = ckpt_io.read_archive(tmp_path / "a" / "last.ckpt")
        extra = {k: v for k, v in tensors.items() if k.startswith("optim.")}
        ckpt_io.save_model(tmp_path / "again.ckpt", model, meta=meta, extra=extra)
        assert (tmp_path / "a" / "last.ckpt").read_bytes() == (tmp_path / "again.ckpt").read_bytes()


SD7K = os.environ.get("FSENET_SD7K_ROOT")


@pytest.mark.dataset
def test_c13_sd7k_statistics():
    with criterion(13, "SD7K split sizes, input RMSE/PSNR, mask coverage (optional)", 1e9):
        if not SD7K:
            pytest.skip("FSENET_SD7K_ROOT not set")
        train_idx, test_idx = scan_dataset(SD7K, "train"), scan_dataset(SD7K, "test")
        assert (len(train_idx), len(test_idx)) == (6479, 760)
        r, p = [], []
        for rec in test_idx.records:
            s = load_triplet(rec, need_mask=False)
            r.append(rmse(s.shadow, s.target))
            p.append(psnr(s.shadow, s.target))
        assert abs(np.mean(r) - 44.14) <= 2, np.mean(r)
        assert abs(np.mean(p) - 15.94) <= 0.3, np.mean(p)
        cov = corpus_stats(train_idx)["coverage"]
        assert abs(cov["mean_percent"] - 41.38) <= 2, cov["mean_percent"]
