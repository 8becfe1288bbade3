"""Command-line entry point: gen-data, train, eval, infer, grad-check."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from .checkpoint import load_checkpoint
from .config import TrainConfig, load_config, parse_config
from .data import generate_synthetic_dataset, load_dataset, save_dataset
from .evaluate import evaluate, infer
from .gradcheck_suites import run_grad_checks
from .train import train


def _cmd_gen_data(args) -> int:
    samples = generate_synthetic_dataset(args.n, args.size, args.seed)
    save_dataset(samples, args.out_dir)
    print(f"wrote {len(samples)} samples of {args.size}x{args.size} to {args.out_dir}")
    return 0


def _cmd_train(args) -> int:
    text = Path(args.config).read_text() if args.config else ""
    if args.set:
        text += "\n" + "\n".join(item.replace("=", " = ", 1) for item in args.set)
    config = parse_config(text)
    result = train(config, emit=lambda line: print(line, flush=True))
    print(f"checkpoint={result.checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    model, config, _ = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.data_dir)
    result = evaluate(model, samples, config.batch_size)
    text = result.to_text()
    sys.stdout.write(text)
    if args.report:
        Path(args.report).write_text(text)
    return 0


def _cmd_infer(args) -> int:
    mask = infer(args.checkpoint, args.image, args.out, args.prob_out)
    print(f"wrote {args.out} ({int(mask.sum())} foreground pixels)")
    return 0


def _cmd_grad_check(args) -> int:
    results = run_grad_checks(args.scope, args.seed)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} gradient check(s) failed", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cafct", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic lesion dataset as PGM files")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train with SGD on the BCE-Dice loss")
    p.add_argument("--config", help="key = value config file (defaults if omitted)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--report", help="also write the metrics block to this file")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("infer", help="predict a mask for one PGM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prob-out", help="optional probability map PGM")
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("grad-check", help="compare backward against finite differences")
    p.add_argument("--scope", default="all")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_grad_check)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        reason = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {reason}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
