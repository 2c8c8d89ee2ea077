import json
import subprocess
import sys

import numpy as np
import pytest

from fsenet import checkpoint as ckpt_io
from fsenet.cli import build_parser, main
from fsenet.image import load_image, save_image
from fsenet.model import build_model, toy_config

SUBCOMMANDS = ("train", "infer", "eval", "metrics", "decompose", "synth", "extract-mask", "stats", "params")


def test_help_exits_zero():
    out = subprocess.run([sys.executable, "-m", "fsenet", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in SUBCOMMANDS:
        assert name in out.stdout


@pytest.mark.parametrize("name", SUBCOMMANDS)
def test_subcommand_help_lists_every_flag(name, capsys):
    with pytest.raises(SystemExit) as exc:
        main([name, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[name]
    for action in sub._actions:
        for opt in action.option_strings:
            assert opt in text


def test_usage_errors_exit_one(capsys):
    for argv in (["params", "--bogus"], ["nope"], [], ["synth", "--image", "x"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1


def test_params(capsys, tmp_path):
    assert main(["params"]) == 0
    assert "M parameters" in capsys.readouterr().out
    cfg = tmp_path / "c.yaml"
    cfg.write_text("base_channels: 8\nheads: 2\n")
    assert main(["params", "--config", str(cfg)]) == 0
    assert main(["params", "--config", str(tmp_path / "missing.yaml")]) == 2
    cfg.write_text("base_channels: 10\nheads: 4\n")
    assert main(["params", "--config", str(cfg)]) == 3


def test_missing_path_exit_two(tmp_path, capsys):
    assert main(["decompose", "--input", str(tmp_path / "x.png"), "--out", str(tmp_path)]) == 2
    assert "x.png" in capsys.readouterr().err


def test_decompose(tmp_path, rng):
    save_image(tmp_path / "x.png", rng.random((30, 41, 3)))
    assert main(["decompose", "--input", str(tmp_path / "x.png"), "--depth", "2", "--out", str(tmp_path / "d")]) == 0
    assert sorted(p.name for p in (tmp_path / "d").iterdir()) == ["high_0.png", "high_1.png", "low.png"]


def test_synth_formula(tmp_path, rng):
    t = rng.random((20, 20, 3))
    m = (rng.random((20, 20, 1)) < 0.5).astype(float)
    save_image(tmp_path / "t.png", t)
    save_image(tmp_path / "m.png", m)
    args = ["synth", "--image", str(tmp_path / "t.png"), "--mask", str(tmp_path / "m.png")]
    assert main(args + ["--alpha", "0.5", "--out", str(tmp_path / "s.png")]) == 0
    t8, m8 = load_image(tmp_path / "t.png"), load_image(tmp_path / "m.png", mode="L")
    s = load_image(tmp_path / "s.png")
    for y, x in rng.integers(0, 20, size=(10, 2)):
        expected = t8[y, x] * (1 - 0.5 * m8[y, x, 0])
        assert np.abs(s[y, x] - expected).max() <= 0.5 / 255 + 1e-9
    assert main(args + ["--alpha", "1.5", "--out", str(tmp_path / "bad.png")]) == 3


def test_synth_idempotent(tmp_path, rng):
    save_image(tmp_path / "t.png", rng.random((12, 12, 3)))
    save_image(tmp_path / "m.png", np.ones((12, 12, 1)))
    for out in ("a.png", "b.png"):
        main(["synth", "--image", str(tmp_path / "t.png"), "--mask", str(tmp_path / "m.png"), "--seed", "4", "--out", str(tmp_path / out)])
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()


def test_extract_mask_and_stats(toy_root, tmp_path, capsys):
    rec = toy_root / "train"
    assert main([
        "extract-mask", "--shadow", str(rec / "input" / "doc0000.png"),
        "--target", str(rec / "target" / "doc0000.png"), "--out", str(tmp_path / "m.png"),
    ]) == 0
    m = load_image(tmp_path / "m.png", mode="L")
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert main(["stats", "--data", str(toy_root), "--out", str(tmp_path / "s.json")]) == 0
    rep = json.loads((tmp_path / "s.json").read_text())
    assert rep["count"] == 4 and "mean_percent" in rep["coverage"]


def test_train_infer_eval_metrics(toy_root, tmp_path, capsys, monkeypatch):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("base_channels: 8\nheads: 2\nffn_expansion: 1\nunet_blocks: 1\nhf_channels: 8\n"
                   "steps: 2\nbatch_size: 1\ncrop_size: 32\n")
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--data", str(toy_root), "--out", str(run)]) == 0
    assert (run / "last.ckpt").is_file() and (run / "best.ckpt").is_file()
    assert json.loads((run / "config.json").read_text())["train"]["steps"] == 2
    monkeypatch.setenv("FSENET_STEPS", "3")
    assert main(["train", "--config", str(cfg), "--data", str(toy_root), "--out", str(tmp_path / "r2")]) == 0
    assert len((tmp_path / "r2" / "loss.csv").read_text().splitlines()) == 4

    ckpt = str(run / "last.ckpt")
    assert main(["infer", "--ckpt", ckpt, "--input", str(toy_root / "test" / "input"), "--out", str(tmp_path / "inf")]) == 0
    assert len(list((tmp_path / "inf").iterdir())) == 2

    report = tmp_path / "ev" / "report.json"
    assert main(["eval", "--ckpt", ckpt, "--data", str(toy_root), "--out", str(report)]) == 0
    d = json.loads(report.read_text())
    assert {"psnr", "ssim", "rmse", "time", "params_m"} <= set(d["summary"])
    assert len(d["config_hash"]) == len(d["checkpoint_hash"]) == 64
    assert "Param(M)" in capsys.readouterr().out

    out = tmp_path / "metrics.json"
    assert main(["metrics", "--pred", str(tmp_path / "inf"), "--target", str(toy_root / "test" / "target"),
                 "--out", str(out), "--table"]) == 0
    assert len(json.loads(out.read_text())["rows"]) == 2


def test_bad_checkpoint_exit_two(tmp_path, rng):
    (tmp_path / "bad.ckpt").write_bytes(b"garbage")
    save_image(tmp_path / "x.png", rng.random((8, 8, 3)))
    assert main(["infer", "--ckpt", str(tmp_path / "bad.ckpt"), "--input", str(tmp_path / "x.png"), "--out", str(tmp_path / "o")]) == 2


def test_infer_max_side(tmp_path, rng):
    ckpt_io.save_model(tmp_path / "m.ckpt", build_model(toy_config()))
    save_image(tmp_path / "x.png", rng.random((50, 90, 3)))
    assert main(["infer", "--ckpt", str(tmp_path / "m.ckpt"), "--input", str(tmp_path / "x.png"),
                 "--out", str(tmp_path / "o"), "--max-side", "40"]) == 0
    assert load_image(tmp_path / "o" / "x.png").shape == (50, 90, 3)
