"""Command-line entry point for the sweep and verification experiments."""

from __future__ import annotations

import argparse
import sys

from .experiments import ConfigError, execute, load_config

RATE_KINDS = {"marginal": "marginal-rates", "nu": "nu-rates",
              "meanfield": "meanfield-rates"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fragbec",
        description="Fragmented-condensate marginals and mean-field dynamics: "
                    "verification suites and convergence-rate experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="seed override")

    common(sub.add_parser("verify", help="oracle-equivalence checks"))
    rates = sub.add_parser("rates", help="convergence-rate sweeps")
    rates.add_argument("--kind", choices=sorted(RATE_KINDS), required=True)
    common(rates)
    common(sub.add_parser("hartree", help="mean-field solver diagnostics"))
    common(sub.add_parser("infinite-gap", help="frozen-gap phase dynamics"))
    common(sub.add_parser("manybody", help="exact N-body vs mean-field sweep"))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "rates":
        kind = RATE_KINDS[args.kind]
    elif args.command == "manybody":
        kind = "meanfield-rates"
    else:
        kind = args.command
    overrides = {"experiment": {"kind": kind}}
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return execute(config, args.out)
    except OSError as exc:
        print(f"cannot write reports: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
