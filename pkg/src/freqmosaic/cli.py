"""Command-line entry point.

Subcommands: mosaic, demosaic, train, eval, gen-dataset, analyze-spectrum,
grad-check.  Exit codes are stable: 0 success, 1 usage, 2 I/O, 3 contract
violation, 4 checkpoint corruption.  The environment variable
FREQMOSAIC_THREADS caps per-image parallelism in eval and gen-dataset
(0 or unset = auto).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import bayer, linegen, metrics, tlc, train, verification
from .errors import CheckpointError, ContractViolation
from .imgio import read_gray, read_rgb, write_image
from .model import ModelConfig, load_checkpoint
from .train import TrainConfig

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_CONTRACT = 3
EXIT_CHECKPOINT = 4


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _thread_count() -> int:
    raw = os.environ.get("FREQMOSAIC_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n <= 0:
        n = min(4, os.cpu_count() or 1)
    return n


def _parallel_map(fn, items):
    items = list(items)
    n = min(_thread_count(), max(len(items), 1))
    if n <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _config_fields(cls):
    import dataclasses

    return {f.name for f in dataclasses.fields(cls)}


def _load_configs(path, overrides=None):
    """Flat JSON with TrainConfig/ModelConfig fields (plus dataset/out dirs)."""
    with open(path) as fp:
        raw = json.load(fp)
    if overrides:
        raw.update({k: v for k, v in overrides.items() if v is not None})
    model_kw = {k: raw[k] for k in _config_fields(ModelConfig) if k in raw}
    train_kw = {k: raw[k] for k in _config_fields(TrainConfig) if k in raw}
    return raw, TrainConfig(**train_kw), ModelConfig(**model_kw)


def cmd_mosaic(args) -> int:
    img = read_rgb(args.input)
    if args.sigma > 0:
        img = bayer.add_noise(img, bayer.NoiseSpec(args.sigma, args.seed))
    cfa = bayer.mosaic(img, args.pattern)
    write_image(args.output, cfa.plane)
    return EXIT_OK


def cmd_demosaic(args) -> int:
    plane = read_gray(args.input)
    cfa = bayer.CfaImage(plane, args.pattern)
    if args.method == "bilinear":
        out = bayer.bilinear_demosaic(cfa)
    else:
        if not args.ckpt:
            raise ContractViolation("--ckpt is required for method=dfenet")
        config, params = load_checkpoint(args.ckpt)
        if args.tlc:
            out = tlc.demosaic_tiled(params, config, cfa, args.sigma,
                                     patch=args.patch, stride=args.stride)
        else:
            from .model import demosaic_image

            out = demosaic_image(cfa, args.sigma, params, config)
    write_image(args.output, out)
    return EXIT_OK


def cmd_train(args) -> int:
    overrides = {"iterations": args.iterations, "seed": args.seed}
    raw, train_cfg, model_cfg = _load_configs(args.config, overrides)
    dataset_dir = args.dataset or raw.get("dataset_dir")
    out_dir = args.out or raw.get("out_dir", "runs/latest")
    if not dataset_dir:
        raise ContractViolation("no dataset_dir in config or --dataset flag")

    def log_hook(it, lr, lf, lrec):
        if it % max(1, train_cfg.iterations // 100 or 1) == 0:
            print(f"iter {it} lr {lr:.3e} loss_fft {lf:.5f} loss_rec {lrec:.5f}")

    train.train_loop(dataset_dir, train_cfg, model_cfg, out_dir=out_dir, log_hook=log_hook)
    print(f"checkpoint and log written under {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred_dir), Path(args.gt_dir)
    names = sorted(p.name for p in pred_dir.iterdir()
                   if p.suffix.lower() in (".png", ".ppm", ".pgm"))
    if not names:
        raise FileNotFoundError(f"no images in {pred_dir}")
    missing = [n for n in names if not (gt_dir / n).exists()]
    if missing:
        raise FileNotFoundError(f"missing reference images: {missing[:3]}")
    pairs = [(n, read_rgb(pred_dir / n), read_rgb(gt_dir / n)) for n in names]
    report = metrics.evaluate_pairs(pairs, parallel_map=_parallel_map)
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    specs = linegen.gen_dataset(args.count, args.seed, args.out_dir, size=args.size)
    print(f"wrote {specs['count']} images and manifest.json to {args.out_dir}")
    return EXIT_OK


def cmd_spectrum(args) -> int:
    img = read_rgb(args.input)
    plane = img[:, :, 1]
    if args.ratio:
        ref = read_rgb(args.ratio)[:, :, 1]
        heat = bayer.spectrum_ratio(plane, ref)
    else:
        heat = bayer.spectrum(plane)
    write_image(args.output, heat)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = None
    if args.config:
        _, _, config = _load_configs(args.config)
    results, worst, passed = verification.run_gradcheck_suite(config)
    for name, err in results:
        print(f"{'PASS' if err < 1e-4 else 'FAIL'} {name:24s} max rel err {err:.3e}")
    print(f"worst {worst:.3e}")
    return EXIT_OK if passed else EXIT_CONTRACT


def build_parser() -> _Parser:
    parser = _Parser(prog="freqmosaic", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("mosaic", help="sample an RGB image through the Bayer pattern")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--pattern", default="RGGB", choices=sorted(bayer.PATTERNS))
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_mosaic)

    p = sub.add_parser("demosaic", help="reconstruct RGB from a CFA plane")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", default="bilinear", choices=("bilinear", "dfenet"))
    p.add_argument("--ckpt")
    p.add_argument("--sigma", type=float, default=0.0)
    p.add_argument("--pattern", default="RGGB", choices=sorted(bayer.PATTERNS))
    p.add_argument("--tlc", action="store_true")
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.set_defaults(fn=cmd_demosaic)

    p = sub.add_parser("train", help="run the stagewise training loop")
    p.add_argument("config")
    p.add_argument("--dataset")
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM over paired directories")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("gen-dataset", help="generate line-pattern test images")
    p.add_argument("count", type=int)
    p.add_argument("seed", type=int)
    p.add_argument("out_dir")
    p.add_argument("--size", type=int, default=128)
    p.set_defaults(fn=cmd_gen_dataset)

    p = sub.add_parser("analyze-spectrum", help="write a spectrum heatmap PNG")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--ratio", help="reference image for a spectrum-ratio heatmap")
    p.set_defaults(fn=cmd_spectrum)

    p = sub.add_parser("grad-check", help="run the finite-difference suite")
    p.add_argument("--config")
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except ContractViolation as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"bad config: {exc}", file=sys.stderr)
        return EXIT_IO


def main_entry():
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
