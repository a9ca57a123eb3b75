"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .errors import ConfigError, TakeoverEffectsError
from .pipeline import RunConfig, load_config, report, run, stages_for

VERBS = ("run", "simulate", "estimate-prodfn", "markups", "did", "event-study", "psm-did", "classify", "report")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="takeover-effects",
                                     description="Markups and staggered DiD effects of takeovers.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb, help="all stages listed in the config" if verb == "run" else f"{verb} stage")
        p.add_argument("--config", type=Path, help="flat key = value run configuration")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _config(args) -> RunConfig:
    overrides = {"seed": args.seed, "out": str(args.out) if args.out else None}
    if args.config is not None:
        return load_config(args.config, **overrides)
    cfg = RunConfig()
    for key, val in overrides.items():
        if val is not None:
            setattr(cfg, key, val)
    return cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        cfg = _config(args)
        if args.verb == "report":
            report(cfg.out, cfg.manifest())
            return 0
        if args.verb != "run":
            stages = stages_for(args.verb)
            # a configured simulation still supplies the inputs of a single-stage run
            if "simulate" in cfg.stages and "simulate" not in stages:
                stages = ("simulate", *stages)
            cfg.stages = stages
        run(cfg, threads=args.threads)
    except TakeoverEffectsError as exc:
        stage = getattr(exc, "stage", None)
        where = f" in stage {stage}" if stage else ""
        print(f"error{where}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
