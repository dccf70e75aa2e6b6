"""Command-line entry point: ``seqpipe run|compare|list-policies|validate``."""

import argparse
import logging
import sys

from .env import EnumerationCapExceeded
from .harness import SERIES, ConfigError, export, load_config, run_many
from .policies import POLICIES

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return values


def _name_list(text):
    names = [v.strip() for v in text.split(",") if v.strip()]
    unknown = [n for n in names if n not in POLICIES]
    if not names or unknown:
        raise argparse.ArgumentTypeError(
            f"unknown policies {unknown}; choose from {sorted(POLICIES)}")
    return names


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which matches the config-error code
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser():
    parser = _Parser(prog="seqpipe", description="Cost-aware model selection for sequential pipelines.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run the configured policy over one or more seeds")
    run.add_argument("--config", required=True)
    run.add_argument("--seeds", type=_int_list, help="comma-separated seeds (overrides the config)")
    run.add_argument("--out", help="output directory (overrides the config)")

    cmp_ = sub.add_parser("compare", help="run several policies on shared environment seeds")
    cmp_.add_argument("--config", required=True)
    cmp_.add_argument("--policies", required=True, type=_name_list)
    cmp_.add_argument("--seeds", type=_int_list)
    cmp_.add_argument("--out", required=True)

    sub.add_parser("list-policies", help="print the available policy names")

    val = sub.add_parser("validate", help="check a config file without running it")
    val.add_argument("--config", required=True)
    return parser


def _report(summaries):
    width = max(len(p) for p in summaries)
    print(f"{'policy':<{width}}  " + "  ".join(f"{k:>15}" for k in SERIES))
    for policy, summary in summaries.items():
        finals = [summary["per_round"][k]["mean"][-1] for k in SERIES]
        print(f"{policy:<{width}}  " + "  ".join(f"{v:15.4f}" for v in finals))


def _execute(args):
    if args.command == "list-policies":
        for name in sorted(POLICIES):
            print(name)
        return EXIT_OK
    config = load_config(args.config)
    if args.command == "validate":
        print(f"{args.config}: ok ({config.policy}, k={config.spec.k}, T={config.T})")
        return EXIT_OK
    seeds = args.seeds or config.seeds
    if args.command == "run":
        out = args.out or config.out
        if out is None:
            raise ConfigError("out", "no output directory given in the config or via --out")
        grouped = run_many(config, [config.policy], seeds)
    else:
        out = args.out
        for name in args.policies:
            config.with_policy(name)  # per-policy validation, e.g. fixed needs arms
        grouped = run_many(config, args.policies, seeds)
    summaries = export(config, grouped, out)
    _report(summaries)
    print(f"wrote {out}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _execute(args)
    except ConfigError as exc:
        print(f"config error in {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FloatingPointError, EnumerationCapExceeded, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
