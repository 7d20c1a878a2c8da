"""Command-line entry point: ``condenhance <command> ...``.

Exit codes: 0 success, 1 validation error, 2 runtime or numeric error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import gradcheck
from .checkpoint import CheckpointError, load_checkpoint
from .data import SyntheticDatasetSpec, synth_generate
from .imageio import ImageDecodeError, list_pngs, load_test_pairs, read_png, write_png
from .inference import enhance_image
from .metrics import eval_reference_set
from .networks import DEFAULT_PARAM_COUNT, init_params, param_count
from .train import (
    NonFiniteLossError,
    format_key_values,
    load_config,
    load_state,
    parse_key_values,
    run_training,
)

log = logging.getLogger("condenhance")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; here that is a validation error
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- commands --------------------------------------------------------------------


def cmd_synth(args) -> int:
    text = Path(args.spec).read_text(encoding="utf-8") if args.spec else ""
    spec = parse_key_values(text, SyntheticDatasetSpec)
    spec.validate()
    ds = synth_generate(spec)
    out = Path(args.out)
    for sub in ("low", "normal", "test_pairs"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(ds.low_pool):
        write_png(out / "low" / f"{i:04d}.png", img)
    for i, img in enumerate(ds.normal_pool):
        write_png(out / "normal" / f"{i:04d}.png", img)
    for i, (dark, truth) in enumerate(ds.test_pairs):
        write_png(out / "test_pairs" / f"{i:04d}_dark.png", dark)
        write_png(out / "test_pairs" / f"{i:04d}_truth.png", truth)
    manifest = format_key_values(spec) + (
        f"low_images = {len(ds.low_pool)}\n"
        f"normal_images = {len(ds.normal_pool)}\n"
        f"test_pairs = {len(ds.test_pairs)}\n"
    )
    (out / "manifest.txt").write_text(manifest, encoding="utf-8")
    print(f"wrote {len(ds.low_pool)} low, {len(ds.normal_pool)} normal, "
          f"{len(ds.test_pairs)} test pairs to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    state = None
    if args.resume:
        state, seed = load_state(args.resume)
        if seed != cfg.seed:
            raise ValueError(f"checkpoint was trained with seed {seed}, config has {cfg.seed}")
        print(f"resuming at iteration {state.iteration}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(format_key_values(cfg), encoding="utf-8")

    def progress(it, report):
        if it % args.log_every == 0 or it == cfg.iterations:
            print(f"iter {it:6d}  " + "  ".join(f"{k}={v:.4f}" for k, v in report.items()))

    if state is None:
        print(f"parameters: {param_count(init_params(cfg.seed, cfg.scale_mode))}")
    run_training(cfg, out, state=state, callback=progress)
    return EXIT_OK


def cmd_enhance(args) -> int:
    bundle = load_checkpoint(args.checkpoint)[0]
    image = read_png(args.input)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for ref_path in args.reference:
        result = enhance_image(bundle, image, read_png(ref_path))
        target = out / f"{stem}__{Path(ref_path).stem}.png"
        write_png(target, result)
        print(target)
    return EXIT_OK


def cmd_eval(args) -> int:
    bundle = load_checkpoint(args.checkpoint)[0]
    ids, pairs = load_test_pairs(args.test)
    ref_paths = list_pngs(args.refs)
    if not pairs or not ref_paths:
        raise ValueError("need at least one test pair and one reference")
    refs = [read_png(p) for p in ref_paths]
    report = eval_reference_set(lambda x, r: enhance_image(bundle, x, r), pairs, refs,
                                image_ids=ids, ref_ids=[p.stem for p in ref_paths])
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(report.to_csv(), encoding="utf-8")
    for label, vals in report.summary().items():
        print(f"{label}: psnr {vals['psnr_db']:.3f} dB  ssim {vals['ssim']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.precision != "high":
        raise ValueError("only --precision high (float64) is supported")
    results = [gradcheck.grad_check(name, args.trials, args.eps, args.tol, args.seed)
               for name in args.only or list(gradcheck.OPERATORS) + list(gradcheck.BLOCKS)]
    if not args.skip_end_to_end and not args.only:
        results.append(gradcheck.end_to_end_check(args.seed, tol=args.e2e_tol))
    width = max(len(r.name) for r in results)
    print(f"{'name':<{width}}  {'max_rel_error':>13}  result")
    for r in results:
        print(f"{r.name:<{width}}  {r.max_rel_error:13.3e}  {'PASS' if r.passed else 'FAIL'}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def cmd_params(args) -> int:
    n = param_count(init_params(0))
    print(n)
    if n != DEFAULT_PARAM_COUNT:
        log.warning("parameter count %d differs from documented %d", n, DEFAULT_PARAM_COUNT)
    return EXIT_OK


# -- wiring ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="condenhance", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate the synthetic dataset as PNGs")
    p.add_argument("--spec", help="key = value file of SyntheticDatasetSpec fields")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from a key = value config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("enhance", help="enhance one image once per reference")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--reference", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("eval", help="score test pairs against a reference set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--refs", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient rule")
    p.add_argument("--precision", choices=("high",), default="high")
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--e2e-tol", type=float, default=1e-3)
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--only", nargs="+", help="restrict to these operator/block names")
    p.add_argument("--skip-end-to-end", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("params", help="print the default parameter count")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except (NonFiniteLossError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, KeyError, ValueError, CheckpointError, ImageDecodeError,
            FileNotFoundError) as exc:
        # KeyError str() adds quotes; print the message itself
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
