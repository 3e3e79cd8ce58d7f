"""Command line entry point: ``reachshield <command> --config cfg.json --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .harness import (ConfigError, ExperimentConfig, cmd_ablate_trigger, cmd_ablate_w, cmd_train,
                      cmd_verify_bound, cmd_verify_recovery)
from .recovery import SynthesisError

COMMANDS = {
    "train": cmd_train,
    "ablate-w": cmd_ablate_w,
    "ablate-trigger": cmd_ablate_trigger,
    "verify-bound": cmd_verify_bound,
    "verify-recovery": cmd_verify_recovery,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        sys.stderr.write(f"error: usage: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reachshield", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment JSON; defaults are used for missing keys")
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--seed-override", type=int, help="run a single seed instead of the configured list")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _fail(kind: str, msg: str, code: int) -> int:
    sys.stderr.write(f"error: {kind}: {' '.join(str(msg).split())}\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
        if args.seed_override is not None:
            cfg = replace(cfg, seeds=(args.seed_override,))
    except ConfigError as exc:
        return _fail("config", exc, 2)
    out = Path(args.out or cfg.output_dir)
    try:
        summary = COMMANDS[args.command](cfg, out)
    except SynthesisError as exc:
        return _fail("synthesis", exc, 3)
    except OSError as exc:
        return _fail("io", exc, 4)
    if args.command.startswith("verify-"):
        status = "PASS" if summary["passed"] else "FAIL"
        detail = (f"violations={summary['violations']}/{summary['systems']}"
                  if args.command == "verify-bound"
                  else f"min_fraction={summary['min_fraction']:.4f} threshold={summary['threshold']}")
        print(f"{args.command}: {status} {detail}")
        return 0 if summary["passed"] else 1
    print(f"{args.command}: wrote {out / 'metrics.csv'} and {out / 'summary.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
