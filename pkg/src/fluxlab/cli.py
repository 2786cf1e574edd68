"""Command line entry point: ``fluxlab run`` and ``fluxlab validate``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import MC_EXPERIMENTS, MIN_PATHS, ConfigError, dump_config, load_config
from .engine import THREADS_ENV
from .experiments import EXIT_CONFIG, run_experiment


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluxlab", description="Monte Carlo flux experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--seed", type=int, help="override master_seed")
    run.add_argument("--out", help="override the output directory")
    run.add_argument("--paths", type=int, help="override n_paths")
    run.add_argument("--threads", type=int, help=f"worker threads (else ${THREADS_ENV}, else config)")
    val = sub.add_parser("validate", help="validate a config and print it with defaults")
    val.add_argument("config")
    return p


def _load(path):
    try:
        return load_config(path)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"{path}: {e}", file=sys.stderr)
    except OSError as exc:
        print(f"{path}: {exc}", file=sys.stderr)
    return None


def _threads(arg, cfg_threads):
    if arg is not None:
        return arg
    env = os.environ.get(THREADS_ENV)
    if env:
        return int(env)
    return cfg_threads


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _load(args.config)
    if cfg is None:
        return EXIT_CONFIG
    if args.command == "validate":
        sys.stdout.write(dump_config(cfg))
        return 0
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("--seed must be in [0, 2^64)", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        print("--threads must be positive", file=sys.stderr)
        return EXIT_CONFIG
    cfg = cfg.with_overrides(args.seed, args.paths, None, args.out)
    if cfg.experiment in MC_EXPERIMENTS and cfg.n_paths < MIN_PATHS:
        print(f"n_paths must be >= {MIN_PATHS} for Monte Carlo experiments", file=sys.stderr)
        return EXIT_CONFIG
    result = run_experiment(cfg, threads=_threads(args.threads, cfg.threads))
    sys.stdout.write(result.report)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
