"""Command-line entry point: ``zo-opt run | trend | validate-estimators``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, ZoOptError

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _slope_range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError("expected LO:HI, e.g. -0.8:-0.25") from None
    if lo > hi:
        raise argparse.ArgumentTypeError("LO must not exceed HI")
    return lo, hi


def build_parser():
    parser = argparse.ArgumentParser(prog="zo-opt", description="Zeroth-order stochastic optimization experiments")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--out", help="output directory (overrides the config)")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")
    run.add_argument("--verify", choices=("on", "off"), default="on",
                     help="compute reference criteria (never affects the trajectory)")

    trend = sub.add_parser("trend", help="log-log slope check on a summary CSV")
    trend.add_argument("summary")
    trend.add_argument("--criterion", required=True)
    trend.add_argument("--slope", required=True, type=_slope_range, metavar="LO:HI")
    trend.add_argument("--x", default="N", choices=("N", "d"))

    val = sub.add_parser("validate-estimators", help="statistical checks of the estimators")
    val.add_argument("--quick", action="store_true")
    return parser


def _join_slope(argv):
    # argparse reads "-0.8:-0.25" as an option; glue it to the flag
    out = []
    it = iter(argv)
    for a in it:
        if a == "--slope":
            out.append(f"--slope={next(it, '')}")
        else:
            out.append(a)
    return out


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_join_slope(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            from .harness import load_config, run_experiment

            cfg = load_config(args.config)
            if args.jobs < 1:
                raise ConfigError("--jobs", "must be >= 1")
            result = run_experiment(cfg, args.out, args.jobs, args.verify == "on")
            print(f"wrote {len(result.runs)} trace(s) and summary.csv to {result.out_dir}")
            if result.n_failed:
                print(f"{result.n_failed} run(s) failed; see summary n_failed", file=sys.stderr)
                return EXIT_RUNTIME
            return EXIT_OK
        if args.command == "trend":
            from .harness import trend_check

            report = trend_check(args.summary, args.criterion, args.slope, x=args.x)
            print(report)
            return EXIT_OK if report.passed else EXIT_VALIDATION
        from .validation import run_checks

        results = run_checks(quick=args.quick)
        for r in results:
            print(r)
        return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (ZoOptError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
