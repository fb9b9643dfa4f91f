"""Command-line entry point.

    mibench <experiment> --config <path> [--seed S] [--out DIR] [--check]

Without --config the experiment runs with its built-in defaults.  --seed
replaces the configured seed list with a single seed; --out overrides the
output directory.  --check ignores the experiment settings and runs the
full acceptance suite instead, printing one pass/fail line per criterion.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 acceptance-check failure.
"""

import argparse
import sys

from .config import EXPERIMENTS, default_config, parse_config
from .errors import ConfigError, DomainError, NumericError, ShapeError
from .harness import LemmaReport, run_experiment, write_outputs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CHECK = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mibench",
        description="Neural mutual-information estimation benchmark")
    parser.add_argument("experiment", choices=EXPERIMENTS,
                        help="which canned experiment to run")
    parser.add_argument("--config", metavar="PATH",
                        help="experiment config file (defaults used if omitted)")
    parser.add_argument("--seed", type=int, metavar="S",
                        help="replace the configured seed list with this one seed")
    parser.add_argument("--out", metavar="DIR",
                        help="override the output directory")
    parser.add_argument("--check", action="store_true",
                        help="run the acceptance suite instead of the experiment")
    return parser


def _print_summary(record, paths) -> None:
    if isinstance(record, LemmaReport):
        status = "passed" if record.passed else "FAILED"
        print(f"lemma check: {record.checked - record.violations}/{record.checked} "
              f"bound evaluations hold ({status})")
    else:
        print(f"{record.experiment}: true MI {record.true_mi_bits:.4f} bits")
        for kind, _, bias, var, seeds in record.summary_rows:
            print(f"  {kind:6s} final mean {record.true_mi_bits + bias:.4f} bits "
                  f"(bias {bias:+.4f}, across-seed variance {var:.4g}, "
                  f"{seeds} seeds)")
    for path in paths:
        print(f"wrote {path}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.check:
            from .acceptance import run_all
            results = run_all(echo=print)
            return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK
        cfg = parse_config(args.config) if args.config else default_config(args.experiment)
        if cfg.experiment != args.experiment:
            raise ConfigError(
                f"config is for {cfg.experiment!r}, not {args.experiment!r}")
        if args.seed is not None:
            cfg.seeds = (args.seed,)
        if args.out is not None:
            cfg.output_dir = args.out
        cfg.validate()
        record = run_experiment(cfg)
        paths = write_outputs(record, cfg.output_dir)
        _print_summary(record, paths)
        if isinstance(record, LemmaReport) and not record.passed:
            return EXIT_NUMERIC
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, DomainError, ShapeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
