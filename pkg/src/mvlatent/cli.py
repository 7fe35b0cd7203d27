"""Command-line entry point: ``mvlatent {synth,train,eval,suite}``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure,
3 partial suite failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .core import MVLatentError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3

log = logging.getLogger("mvlatent")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvlatent", description="Multi-view latent disentanglement experiments.",
                     epilog="exit codes: 0 success, 1 usage or config error, 2 runtime failure, "
                            "3 partial suite failure")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [("synth", "write the configured synthetic dataset"),
                        ("train", "train the configured method"),
                        ("eval", "probe a trained checkpoint"),
                        ("suite", "train and compare all configured variants and baselines")]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, type=Path)
        p.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="override the master seed")
        if name == "eval":
            p.add_argument("--checkpoint", type=Path,
                           help="checkpoint to evaluate (default: OUT/checkpoints/model.ckpt)")
        if name == "suite":
            p.add_argument("--parallel", type=int, default=1, metavar="K")
    return parser


def _resolve(args) -> tuple[ExperimentConfig, Path]:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be non-negative")
        cfg = cfg.with_seed(args.seed)
    out = args.out or (Path(cfg.out_dir) if cfg.out_dir else None)
    if out is None:
        raise ConfigError("no output directory: pass --out or set out_dir")
    return cfg, out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg, out = _resolve(args)
    except (ConfigError, OSError, TypeError, ValueError) as exc:
        print(f"mvlatent: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    from . import pipeline

    try:
        if args.command == "synth":
            manifest, digest = pipeline.synth(cfg, out)
            print(json.dumps({"manifest": str(manifest), "digest": digest}))
        elif args.command == "train":
            _, record, _ = pipeline.run_train(cfg, out)
            print(json.dumps({"checkpoint": str(out / pipeline.CHECKPOINT),
                              "selected_epoch": record.selected_epoch}))
        elif args.command == "eval":
            report = pipeline.run_eval(cfg, out, args.checkpoint)
            print(json.dumps(report.to_json(), sort_keys=True))
        else:
            if args.parallel < 1:
                raise ConfigError("--parallel must be >= 1")
            report, failures = pipeline.run_suite(cfg, out, args.parallel)
            print(json.dumps({"rows": len(report.table), "failed": sorted(failures)}))
            if failures:
                for name, msg in sorted(failures.items()):
                    print(f"mvlatent: suite member {name} failed: {msg}", file=sys.stderr)
                return EXIT_PARTIAL
    except ConfigError as exc:
        print(f"mvlatent: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MVLatentError, OSError, ValueError) as exc:
        print(f"mvlatent: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
