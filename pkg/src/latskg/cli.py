"""Command-line entry point: ``latskg <experiment> [--config F] [--seed S] [--out P] [--samples N]``."""
import argparse
import logging
import os
import sys

from .errors import ConfigError, LatticeError, NumericError

COMMANDS = {
    "reliability": "reliability",
    "uniformity": "uniformity",
    "leakage": "leakage",
    "tradeoff": "tradeoff",
    "flatness": "flatness_scan",
    "resolvability": "resolvability",
}
LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO,
          "debug": logging.DEBUG}

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _u64(text):
    try:
        value = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return value


def build_parser():
    parser = argparse.ArgumentParser(prog="latskg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--seed", type=_u64, help="root seed (overrides the config)")
        p.add_argument("--out", help="CSV output path; sidecars are written next to it")
        p.add_argument("--samples", type=int, help="Monte-Carlo sample count")
        p.add_argument("--workers", type=int, help="worker threads (results do not depend on it)")
    return parser


def _setup_logging():
    level = os.environ.get("SKG_LOG", "warn").lower()
    logging.basicConfig(level=LEVELS.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    log = logging.getLogger("latskg")
    from . import experiments

    try:
        raw = experiments.load_config(args.config) if args.config else {}
        cfg = experiments.resolve_config(COMMANDS[args.command], raw, seed=args.seed,
                                         samples=args.samples, workers=args.workers)
        out = args.out or cfg.get("out") or f"{args.command}.csv"
        report = experiments.run_experiment(cfg)
        report.write(out)
    except (ConfigError, KeyError, TypeError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except NumericError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except LatticeError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG
    log.info("wrote %s", out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
