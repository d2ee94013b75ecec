"""Command-line entry point: ``thermobeam <subcommand> [options]``."""
from __future__ import annotations

import argparse
import sys

from . import experiments as X

COMMANDS = {
    "simulate": X.cmd_simulate,
    "stationary": X.cmd_stationary,
    "decompose": X.cmd_decompose,
    "backward-check": X.cmd_backward,
    "gronwall-check": X.cmd_gronwall,
    "absorb": X.cmd_absorb,
    "attract": X.cmd_attract,
    "gamma-sweep": X.cmd_gamma_sweep,
}


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value configuration file")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, help="ensemble seed (overrides ensemble.seed)")
    common.add_argument("--threads", type=int, help="worker threads (overrides run.threads)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a configuration key; repeatable")
    ap = argparse.ArgumentParser(prog="thermobeam", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "gronwall-check":
            for flag, key in (("--K", "K"), ("--Q", "Q"), ("--eps0", "eps0"),
                              ("--lambda0", "lambda0"), ("--horizon", "horizon")):
                sp.add_argument(flag, type=float, dest=f"gr_{key}", help=f"gronwall.{key}")
    return ap


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return X.EXIT_USAGE if exc.code else X.EXIT_OK
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return X.EXIT_USAGE
        k, v = item.split("=", 1)
        overrides[k.strip()] = v
    if args.seed is not None:
        overrides["ensemble.seed"] = str(args.seed)
    if args.threads is not None:
        overrides["run.threads"] = str(args.threads)
    if args.out is not None:
        overrides["output.dir"] = args.out
    if args.command == "gronwall-check":
        for key in ("K", "Q", "eps0", "lambda0", "horizon"):
            val = getattr(args, f"gr_{key}")
            if val is not None:
                overrides[f"gronwall.{key}"] = repr(val)
    try:
        cfg = X.load_config(args.config, overrides)
        return COMMANDS[args.command](cfg, cfg.out_dir)
    except X.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return X.EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return X.EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
