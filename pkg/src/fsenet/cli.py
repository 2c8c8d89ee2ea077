"""``fsenet`` command line entry point.

Exit codes: 0 success, 1 usage error, 2 data/path error, 3 runtime error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .errors import CheckpointError, FSENetError, ImageFormatError
from .image import load_image, load_mask, pad_to_multiple, save_image

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3

log = logging.getLogger("fsenet")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _existing(path):
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"path does not exist: {p}")
    return p


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_train(args):
    from .data import scan_dataset
    from .trainer import config_hash, load_config, train

    model_cfg, train_cfg = load_config(args.config)
    index = scan_dataset(_existing(args.data), args.split)
    val_index = None
    if args.val_split and (Path(args.data) / args.val_split).is_dir():
        val_index = scan_dataset(args.data, args.val_split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(
        json.dumps({"model": model_cfg.to_dict(), "train": train_cfg.to_dict(),
                    "config_hash": config_hash(model_cfg, train_cfg)}, indent=2) + "\n"
    )
    res = train(model_cfg, train_cfg, index, out, val_index=val_index, resume=args.resume, stop_at=args.stop_at)
    print(f"trained to step {res.state.step}; checkpoints in {out}")
    if res.state.best_val:
        print("best validation:", json.dumps(res.state.best_val))


def cmd_infer(args):
    from .trainer import infer

    results = infer(_existing(args.ckpt), _existing(args.input), args.out, max_side=args.max_side)
    for name, dest, dt in results:
        print(f"{name}\t{dest}\t{dt:.3f}s")


def cmd_eval(args):
    from .data import scan_dataset
    from .metrics import evaluate_dir
    from .model import count_parameters
    from .trainer import config_hash, file_hash, infer

    ckpt = _existing(args.ckpt)
    model, _ = ckpt_io.load_model(ckpt)
    index = scan_dataset(_existing(args.data), args.split)
    pred_dir = Path(args.pred_dir) if args.pred_dir else Path(args.out).with_suffix("").parent / "pred"
    timings = {}
    target_dir = Path(args.data) / args.split / "target"
    for rec in index.records:
        for name, _, dt in infer(ckpt, rec.input, pred_dir, max_side=args.max_side, model=model):
            timings[name] = dt
    report = evaluate_dir(pred_dir, target_dir, timings=timings)
    params = count_parameters(model)
    m = report.mean
    row = {"psnr": m["psnr"], "ssim": m["ssim"], "rmse": m["rmse"], "time": m["seconds"], "params_m": params / 1e6}
    report.to_json(
        args.out,
        summary=row,
        config_hash=config_hash(model.cfg),
        checkpoint_hash=file_hash(ckpt),
        split=args.split,
    )
    if args.table:
        print(report.table())
    print("PSNR    SSIM    RMSE     Time(s)  Param(M)")
    print(f"{m['psnr']:<7.2f} {m['ssim']:<7.3f} {m['rmse']:<8.2f} {m['seconds']:<8.3f} {params / 1e6:.2f}")


def cmd_metrics(args):
    from .metrics import evaluate_dir

    report = evaluate_dir(_existing(args.pred), _existing(args.target), colorspace=args.colorspace)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.to_json(args.out)
    if args.table or not args.out:
        print(report.table())
    for w in report.warnings:
        print("warning:", w, file=sys.stderr)


def cmd_decompose(args):
    from .pyramid import band_to_display, decompose

    img = load_image(_existing(args.input))
    padded, spec = pad_to_multiple(img, 2**args.depth)
    stack = decompose(padded, args.depth)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, band in enumerate(stack.highs):
        save_image(out / f"high_{i}.png", band_to_display(band))
    save_image(out / "low.png", np.clip(stack.low, 0.0, 1.0))
    print(f"wrote {len(stack.highs)} high bands and low.png to {out} (padding {spec})")


def cmd_synth(args):
    from .data import sample_alpha, synthesize_shadow

    target = load_image(_existing(args.image))
    mask = load_mask(_existing(args.mask))
    alpha = args.alpha if args.alpha is not None else sample_alpha(np.random.default_rng(args.seed))
    save_image(args.out, synthesize_shadow(target, mask, alpha))
    print(f"alpha={alpha:.6f} -> {args.out}")


def cmd_extract_mask(args):
    from .data import extract_mask

    shadow = load_image(_existing(args.shadow))
    target = load_image(_existing(args.target))
    mask = extract_mask(shadow, target, tau=args.tau, radius=args.radius)
    save_image(args.out, mask)
    print(f"shadow fraction {mask.mean():.4f} -> {args.out}")


def cmd_stats(args):
    from .data import corpus_stats, scan_dataset, write_json

    index = scan_dataset(_existing(args.data), args.split)
    report = corpus_stats(index, extract_missing=not args.no_extract, tau=args.tau)
    report["validation"] = index.report()
    if args.out:
        write_json(args.out, report)
    cov = report["coverage"]
    if isinstance(cov, dict):
        print(f"{report['count']} images, shadow area {cov['mean_percent']:.2f}% +- {cov['std_percent']:.2f}%")
    else:
        print(f"{report['count']} images, shadow area unavailable")


def cmd_params(args):
    from .model import build_model, count_parameters
    from .trainer import load_config

    model_cfg, _ = load_config(args.config)
    n = count_parameters(build_model(model_cfg))
    print(f"{n / 1e6:.4f} M parameters ({n})")


# --------------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="fsenet", description="Frequency-aware document shadow removal toolkit.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="train a model on a dataset split")
    s.add_argument("--config", help="YAML key/value config file (FSENET_<KEY> env vars override)")
    s.add_argument("--data", required=True, help="dataset root containing train/ and test/")
    s.add_argument("--split", default="train", help="training split (default: train)")
    s.add_argument("--val-split", default="test", help="validation split, skipped if absent (default: test)")
    s.add_argument("--out", required=True, help="run directory for logs and checkpoints")
    s.add_argument("--resume", help="checkpoint to continue from")
    s.add_argument("--stop-at", type=int, help="stop after this many steps (schedule unchanged)")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="remove shadows from an image or directory")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--input", required=True, help="image file or directory")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--max-side", type=int, help="shrink inputs so the longer side fits, then resize back")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="infer over a split and report PSNR/SSIM/RMSE/time/params")
    s.add_argument("--ckpt", required=True, help="checkpoint file")
    s.add_argument("--data", required=True, help="dataset root")
    s.add_argument("--split", default="test", help="split to evaluate (default: test)")
    s.add_argument("--out", required=True, help="report JSON path")
    s.add_argument("--pred-dir", help="where to write predictions (default: <out dir>/pred)")
    s.add_argument("--max-side", type=int, help="optional inference downscale")
    s.add_argument("--table", action="store_true", help="print per-image table")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("metrics", help="compare prediction and target directories")
    s.add_argument("--pred", required=True, help="prediction directory")
    s.add_argument("--target", required=True, help="target directory")
    s.add_argument("--out", help="report JSON path")
    s.add_argument("--table", action="store_true", help="print aligned text table")
    s.add_argument("--colorspace", choices=("rgb", "lab"), default="rgb", help="RMSE colour space (default: rgb)")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("decompose", help="dump Laplacian bands as PNGs")
    s.add_argument("--input", required=True, help="input image")
    s.add_argument("--depth", type=int, default=2, help="pyramid depth (default: 2)")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_decompose)

    s = sub.add_parser("synth", help="composite a shadow onto a shadow-free image")
    s.add_argument("--image", required=True, help="shadow-free image")
    s.add_argument("--mask", required=True, help="binary mask (nonzero = shadow)")
    s.add_argument("--alpha", type=float, help="shadow strength in [0, 1] (default: random in [0.2, 0.7])")
    s.add_argument("--seed", type=int, default=0, help="seed for the random alpha")
    s.add_argument("--out", required=True, help="output image")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("extract-mask", help="threshold-based shadow mask from a pair")
    s.add_argument("--shadow", required=True, help="shadowed image")
    s.add_argument("--target", required=True, help="shadow-free image")
    s.add_argument("--out", required=True, help="mask PNG (0/255)")
    s.add_argument("--tau", type=float, default=0.85, help="luminance-ratio threshold (default: 0.85)")
    s.add_argument("--radius", type=int, default=2, help="morphology disc radius (default: 2)")
    s.set_defaults(func=cmd_extract_mask)

    s = sub.add_parser("stats", help="shadow-area and resolution statistics for a split")
    s.add_argument("--data", required=True, help="dataset root")
    s.add_argument("--split", default="train", help="split (default: train)")
    s.add_argument("--out", help="JSON report path")
    s.add_argument("--tau", type=float, default=0.85, help="threshold for extracted masks")
    s.add_argument("--no-extract", action="store_true", help="do not extract masks that are missing")
    s.set_defaults(func=cmd_stats)

    s = sub.add_parser("params", help="print the parameter count of a configuration")
    s.add_argument("--config", help="YAML config file (default configuration if omitted)")
    s.set_defaults(func=cmd_params)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        args.func(args)
    except (FileNotFoundError, NotADirectoryError, ImageFormatError, CheckpointError) as exc:
        print(f"fsenet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (FSENetError, RuntimeError, ValueError) as exc:
        print(f"fsenet {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
