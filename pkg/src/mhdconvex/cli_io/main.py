"""``mhdconvex`` command line.

Exit codes: 0 all checks pass, 1 some check failed, 2 invalid input
(configuration or state file); structured errors go to stderr as JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import commands
from .config import ConfigError, load
from .container import ContainerError

SUBCOMMANDS = ("verify", "step", "init", "noise", "galerkin", "blocks", "geom")


def parser():
    p = argparse.ArgumentParser(prog="mhdconvex", description="Convex-integration toolkit for stochastic MHD.")
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("state", nargs="?", help="input state file (step only)")
    p.add_argument("--config", help="JSON configuration file")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit); overrides RNG_SEED")
    p.add_argument("--strict", action="store_true", help="enforce the admissible parameter ranges exactly")
    p.add_argument("--grid", type=int, help="grid points per axis")
    p.add_argument("--level", type=int, help="iteration level q (step: expected input level)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_flags(cfg, args):
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer", "--seed")
        cfg["seed"] = args.seed
    if args.strict:
        cfg["strict"] = True
    if args.grid is not None:
        if args.grid < 8 or args.grid % 4:
            raise ConfigError("--grid must be a multiple of 4 and at least 8", "--grid")
        cfg["grid"] = args.grid
    if args.level is not None:
        cfg["level"] = args.level
    if args.out is not None:
        cfg["output"] = args.out
    return cfg


def run(argv=None):
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_flags(load(args.config), args)
        if cfg["strict"]:
            commands.build_params(cfg)
        out = cfg["output"]
        if args.command == "step":
            if not args.state:
                raise ConfigError("step needs an input state file", "<args>")
            rep = commands.cmd_step(cfg, out, args.state, args.level)
        else:
            rep = commands.COMMANDS[args.command](cfg, out)
    except (ConfigError, ContainerError) as e:
        print(json.dumps(e.to_json()), file=sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(json.dumps({"error": "invalid_input", "message": str(e)}), file=sys.stderr)
        print(f"error: {e}", file=sys.stderr)
        return 2
    for r in rep.rows:
        print(f"{r['status']:4s}  {r['check']}  measured={r['measured']}  tol={r['tolerance']}")
    print(f"{rep.command}: {'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
