"""Command-line entry point ``sphere-nls``."""
from __future__ import annotations

import argparse
import sys

from .xcli import EXPERIMENTS, ConfigError, OutputExistsError, load_config, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphere-nls", description="Wick-ordered cubic NLS on the sphere")
    parser.add_argument("subcommand", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="INI experiment configuration")
    parser.add_argument("--force", action="store_true", help="overwrite an existing result directory")
    parser.add_argument("--workers", type=int, default=1, help="worker processes for sub-experiments")
    parser.add_argument("--output", default=None, help="explicit result directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if config.name != args.subcommand:
        print(f"config error: {args.config} describes '{config.name}', not '{args.subcommand}'",
              file=sys.stderr)
        return 2
    try:
        status, directory = run(config, force=args.force, workers=args.workers, output=args.output)
    except OutputExistsError as exc:
        print(f"refusing to overwrite: {exc}", file=sys.stderr)
        return 3
    print(f"{'ok' if status == 0 else 'partial failure'}: {directory}")
    return status


if __name__ == "__main__":
    sys.exit(main())
