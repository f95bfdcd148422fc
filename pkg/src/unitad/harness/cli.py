"""Command-line entry point: ``unitad {synth,train,infer,eval,report}``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..core import ConfigError
from .config import _parse_value, load_config, save_config
from .data import DataError, write_json_atomic

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

log = logging.getLogger("unitad")


def _overrides(args):
    pairs = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = _parse_value(value)
    if args.seed is not None:
        pairs["train.seed"] = args.seed
        pairs["synth.seed"] = args.seed
    if getattr(args, "thresholds", None):
        pairs["thresholds"] = _parse_value(args.thresholds)
    return pairs


def _config(args):
    return load_config(args.config, _overrides(args))


def cmd_synth(args):
    from .pipeline import synth

    cfg = _config(args)
    doc = synth(cfg)
    n = len(doc["database"])
    print(f"wrote {n} videos to {cfg.data.feature_dir} and {cfg.data.annotations}")


def cmd_train(args):
    from .train import train

    cfg = _config(args)
    if args.out:
        cfg.out_dir = args.out
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    save_config(cfg, Path(cfg.out_dir) / "config.txt")
    _, history = train(cfg, resume=args.checkpoint)
    if history:
        print(f"trained {len(history)} steps; final total loss {history[-1]['total']:.4f}")
    print(f"checkpoints in {Path(cfg.out_dir) / 'checkpoints'}")


def cmd_infer(args):
    from .pipeline import infer

    cfg = _config(args)
    checkpoint = args.checkpoint or str(Path(cfg.out_dir) / "checkpoints" / "last.pt")
    out = args.out or str(Path(cfg.out_dir) / "predictions.json")
    preds, skipped = infer(cfg, checkpoint, args.split, out)
    for vid in skipped:
        print(f"skipped {vid}: missing or unreadable features", file=sys.stderr)
    print(f"wrote predictions for {len(preds)} videos to {out}")


def cmd_eval(args):
    from .pipeline import evaluate, format_table

    cfg = _config(args)
    preds = args.predictions or str(Path(cfg.out_dir) / "predictions.json")
    split = args.split or cfg.data.eval_split
    result = evaluate(preds, cfg.data.annotations, cfg.thresholds or None, split)
    print(format_table(result))
    if args.out:
        write_json_atomic(args.out, result.as_dict(include_curves=True))
    else:
        print(json.dumps(result.as_dict(), sort_keys=True))


def cmd_report(args):
    from .report import render

    cfg = _config(args)
    metrics = args.metrics or str(Path(cfg.out_dir) / "metrics.jsonl")
    out_dir = args.out or str(Path(cfg.out_dir) / "figures")
    for path in render(out_dir, metrics, args.eval):
        print(f"wrote {path}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int, help="overrides train.seed and synth.seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="unitad", description="Unified temporal action detector")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate the synthetic benchmark")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train a detector")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--out", help="run directory (overrides out_dir)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="write a prediction dump")
    p.add_argument("--checkpoint", help="defaults to <out_dir>/checkpoints/last.pt")
    p.add_argument("--split", help="defaults to data.eval_split")
    p.add_argument("--out", help="defaults to <out_dir>/predictions.json")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="score a prediction dump")
    p.add_argument("predictions", nargs="?", help="defaults to <out_dir>/predictions.json")
    p.add_argument("--split", help="defaults to data.eval_split")
    p.add_argument("--thresholds", help="comma-separated tIoU thresholds")
    p.add_argument("--out", help="write the metric JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", parents=[common], help="render loss and PR curves")
    p.add_argument("--metrics", help="defaults to <out_dir>/metrics.jsonl")
    p.add_argument("--eval", help="metric JSON written by 'eval --out'")
    p.add_argument("--out", help="figure directory (defaults to <out_dir>/figures)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
