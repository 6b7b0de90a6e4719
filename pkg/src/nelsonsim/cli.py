"""Command line entry point: one subcommand per pipeline plus ``print-oracle``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import PIPELINES, ExperimentConfig
from .oracles import ORACLES, oracle
from .runner import PipelineError, run


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nelsonsim", description="Nelson-model path samplers and FCLT harness")
    sub = p.add_subparsers(dest="command", required=True)
    for name in PIPELINES:
        sp = sub.add_parser(name, help=f"run the {name} pipeline")
        sp.add_argument("--config", help="YAML experiment file (defaults are used when omitted)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--out", default=f"runs/{name}", help="output directory")
        sp.add_argument("--samples", type=int, help="override mc.n_samples")
        sp.add_argument("--quiet", action="store_true", help="only print the manifest path")
    po = sub.add_parser("print-oracle", help="evaluate a closed-form oracle")
    po.add_argument("name", choices=sorted(ORACLES))
    po.add_argument("args", nargs="*", metavar="KEY=VALUE")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "print-oracle":
        kwargs = {}
        for item in args.args:
            key, sep, val = item.partition("=")
            if not sep:
                print(f"expected KEY=VALUE, got {item!r}", file=sys.stderr)
                return 2
            kwargs[key] = _parse_value(val)
        value = oracle(args.name, **kwargs)
        print(json.dumps(value, default=float))
        return 0

    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s")
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    cfg = cfg.with_overrides(seed=args.seed, samples=args.samples, experiment=args.command)
    try:
        manifest = run(args.command, cfg, args.out)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.quiet:
        print(f"{args.out}/manifest.json")
    else:
        print(json.dumps({k: manifest[k] for k in ("pipeline", "numerical_hash", "outputs", "wall_clock_s")},
                         indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
