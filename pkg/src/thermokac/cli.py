"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 a check failed while ``--assert`` was given.
"""
from __future__ import annotations

import argparse
import json
import sys

from .config import DEFAULTS, build_config, load_file, parse_overrides
from .errors import ConfigError, DomainError, NumericFailure
from .experiments import RUNNERS, save_snapshots

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ASSERT = 0, 2, 3, 4

HELP = {
    "simulate": "single particle-system trajectories with energy bookkeeping",
    "contract": "coupled-pair contraction rate against G_N mu",
    "energy": "energy identities for both rescalings and the solver's m2(t)",
    "poc": "propagation-of-chaos sweep over N",
    "equilibrate": "W2 decay toward equilibrium, equation and particles",
    "phase": "smoothness phase diagram with closed-form checks at lambda = 0",
    "moments": "moment threshold: closed form and ensemble moments across M",
    "sphere": "radial projection onto the energy sphere",
    "genchk": "paired generator on sphere data against its limit",
    "kbar": "N (K1 + K2 + |K3|) over N",
    "stationary": "equilibrium transform, diagnostics and density table",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="thermokac", description="Thermostated Kac model experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in RUNNERS:
        sp = sub.add_parser(name, help=HELP[name], description=HELP[name])
        sp.add_argument("--config", help="JSON file with configuration keys")
        sp.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        sp.add_argument("--out", help="output directory for run.json and replicas.csv")
        sp.add_argument("--format", choices=("csv", "json"), default="csv",
                        help="format of the per-replica table")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key (repeatable; JSON values)")
        sp.add_argument("--assert", dest="assert_checks", action="store_true",
                        help="exit with status 4 if any check fails")
        sp.add_argument("--show-defaults", action="store_true", help="print the defaults and exit")
        if name == "simulate":
            sp.add_argument("--binary", action="store_true", help="also write snapshots.bin")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    name = args.command
    if args.show_defaults:
        print(json.dumps(DEFAULTS[name], indent=2))
        return EXIT_OK
    try:
        layers = [load_file(args.config)] if args.config else []
        cli_layer = parse_overrides(args.overrides)
        if args.seed is not None:
            cli_layer["seed"] = args.seed
        if args.out is not None:
            cli_layer["out"] = args.out
        cfg = build_config(name, *layers, cli_layer)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rec = RUNNERS[name](cfg)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericFailure, DomainError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    if cfg.out_dir:
        rec.save(cfg.out_dir, args.format)
        if name == "simulate":
            save_snapshots(rec, cfg.out_dir, binary=args.binary)
    for c in rec.checks:
        tol = "" if c.tolerance is None else f" tol={c.tolerance:.3g}"
        print(f"{'PASS' if c.passed else 'FAIL'} {c.name}: measured={c.measured:.6g} "
              f"target={c.target:.6g}{tol} ({c.relation})")
    print(f"{name}: {len(rec.checks)} checks, {'all passed' if rec.passed else 'FAILED'}, "
          f"{rec.wall_clock:.1f} s")
    if args.assert_checks and not rec.passed:
        return EXIT_ASSERT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
