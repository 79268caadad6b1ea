"""Command line interface.

Verbs: ``run <config>``, ``resume <checkpoint> <config>``,
``diagnose <checkpoint> <config>``, ``eigen <config>``.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, parse_config
from .runner import (
    build_surface,
    diagnose_checkpoint,
    format_float,
    resume_experiment,
    run_experiment,
)


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--output-dir", default=None, help="override output.directory")
    parser.add_argument("--max-steps", type=int, default=None, help="override flow.max_steps")
    parser.add_argument("--seed", type=int, default=None, help="override initial_map.seed")
    parser.add_argument("--quiet", action="store_true", help="suppress progress output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hmflow",
        description="Heat flow for surface maps with scalar and two-form couplings",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    _add_common(p_run)

    p_resume = sub.add_parser("resume", help="continue a run from a checkpoint")
    p_resume.add_argument("checkpoint")
    p_resume.add_argument("config")
    _add_common(p_resume)

    p_diag = sub.add_parser("diagnose", help="offline diagnostics on a checkpoint")
    p_diag.add_argument("checkpoint")
    p_diag.add_argument("config")
    _add_common(p_diag)

    p_eigen = sub.add_parser("eigen", help="print the first Laplacian eigenvalue")
    p_eigen.add_argument("config")
    _add_common(p_eigen)
    return parser


def _load_config(args):
    overrides = {}
    if args.seed is not None:
        overrides["initial_map.seed"] = args.seed
    return parse_config(args.config, overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1

    try:
        if args.verb == "run":
            return run_experiment(
                cfg, output_dir=args.output_dir, quiet=args.quiet,
                max_steps_override=args.max_steps,
            )
        if args.verb == "resume":
            return resume_experiment(
                args.checkpoint, cfg, output_dir=args.output_dir, quiet=args.quiet,
                max_steps_override=args.max_steps,
            )
        if args.verb == "diagnose":
            return diagnose_checkpoint(
                args.checkpoint, cfg, output_dir=args.output_dir, quiet=args.quiet,
            )
        surface = build_surface(cfg)
        print(format_float(surface.first_eigenvalue()))
        return 0
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
