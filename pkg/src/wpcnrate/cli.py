"""Command line driver.

    wpcnrate run <config> [--out CSV] [--seed N] [--mc TRIALS] [--jobs N]

Exit status: 0 on success, 1 for configuration errors, 2 for numerical or
convergence failures.
"""

import argparse
import logging
import os
import sys
from dataclasses import replace

from .exceptions import ConfigError, ConvergenceError, DomainError, RangeError
from .experiments import (
    config_from_csv,
    dump_config,
    emit_csv,
    parse_config,
    parse_config_text,
    run_experiment,
)

__all__ = ["main", "build_parser", "parse_config", "parse_config_text", "dump_config",
           "emit_csv", "run_experiment", "config_from_csv"]

log = logging.getLogger("wpcnrate")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


def _u64(text):
    value = int(text, 0)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="wpcnrate",
                                     description="Rate-control sweeps for wireless-powered links.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the experiments of a config file")
    run.add_argument("config")
    run.add_argument("--out", help="CSV path (default: stdout); with several experiments "
                                   "the section name is appended to the file stem")
    run.add_argument("--seed", type=_u64, help="override the Monte Carlo seed")
    run.add_argument("--mc", type=int, metavar="TRIALS",
                     help="Monte Carlo trials per grid point and scheme (0 disables)")
    run.add_argument("--jobs", type=_positive, default=1, help="worker processes")
    return parser


def _out_path(base, label, many):
    if base is None or not many:
        return base
    stem, ext = os.path.splitext(base)
    return f"{stem}_{label}{ext or '.csv'}"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        specs = parse_config(args.config)
        if args.mc is not None and args.mc < 0:
            raise ConfigError("--mc must be >= 0", field="mc_trials")
        specs = [replace(s, seed=s.seed if args.seed is None else args.seed,
                         mc_trials=s.mc_trials if args.mc is None else args.mc) for s in specs]
    except ConfigError as exc:
        where = f" (line {exc.line})" if exc.line else ""
        field = f" [field: {exc.field}]" if exc.field else ""
        print(f"config error{where}{field}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    many = len(specs) > 1
    try:
        for spec in specs:
            log.info("running %s (%s, %d points)", spec.label, spec.name, max(len(spec.grid), 1))
            result = run_experiment(spec, jobs=args.jobs)
            path = _out_path(args.out, spec.label, many)
            text = emit_csv(result, path)
            if path is None:
                sys.stdout.write(text)
    except (ConvergenceError, DomainError, RangeError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
