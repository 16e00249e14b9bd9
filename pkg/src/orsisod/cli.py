"""Command line entry point.

Exit codes: 0 success, 1 validation failure, 2 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time

import numpy as np

from .errors import ConfigError, NonFiniteError, StateError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def cmd_gen_data(args) -> int:
    from .data import gen_data

    items = gen_data(args.out, args.count, args.size, args.seed)
    props = np.array([it.proportion for it in items])
    print(f"wrote {len(items)} pairs to {args.out} (proportion min {props.min():.3f}, max {props.max():.3f})")
    return EXIT_OK


def cmd_train_toy(args) -> int:
    from .config import load_config
    from .train import run_training

    cfg = load_config(args.config)
    if args.out:
        cfg.values["out_dir"] = args.out
    summary = run_training(cfg)
    print(f"train_mae {summary['train_mae']:.6f}  pg_mse {summary['pg_mse']:.6f}  steps {summary['steps']}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .evaluation import evaluate_dirs, write_report

    result = evaluate_dirs(args.pred, args.gt)
    for note in result.warnings:
        print(f"warning: {note}", file=sys.stderr)
    for name in result.missing:
        print(f"missing counterpart, skipped: {name}", file=sys.stderr)
    write_report(result, args.out)
    headline = "fbeta_max" if args.threshold_mode == "max" else "fbeta_adaptive"
    m = result.mean
    print(
        f"{len(result.rows)} images  mae {m['mae']:.4f}  fbeta ({args.threshold_mode}) {m[headline]:.4f}  "
        f"emeasure {m['emeasure']:.4f}  smeasure {m['smeasure']:.4f}"
    )
    if result.missing:
        return EXIT_IO
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    start = time.perf_counter()
    results = run_suite(args.seed, corrupt=args.corrupt)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - start:.1f}s")
    if failed:
        print("failed: " + ", ".join(failed))
        return EXIT_INVALID
    return EXIT_OK


def cmd_dwt_roundtrip(args) -> int:
    from .data import read_gray
    from .wavelet import dwt2_array, idwt2

    img = read_gray(args.image).astype(np.float64) / 255.0
    h, w = img.shape
    if h % 2 or w % 2:
        raise ValueError(f"{args.image}: dwt-roundtrip needs even dimensions, got {h}x{w}")
    quad = dwt2_array(img)
    rec = idwt2(quad).data[0, 0]
    err = float(np.max(np.abs(rec - img)))
    energy = float(np.sum(img**2))
    residual = abs(quad.energy() - energy) / energy if energy else abs(quad.energy())
    print(f"max_abs_error {err:.3e}")
    print(f"energy_residual {residual:.3e}")
    return EXIT_OK if err <= 1e-9 and residual <= 1e-9 else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="orsisod", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-toy", help="train on a synthetic dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval", help="score a directory of saliency maps")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold-mode", choices=("max", "adaptive"), default="max")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corrupt", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dwt-roundtrip", help="Haar analysis/synthesis check on an image")
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_dwt_roundtrip)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, StateError, NonFiniteError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
