"""
Main entry point for the oppspec command line.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import structlog
from pydantic import ValidationError

from oppspec import __version__
from oppspec.config import LOG_LEVELS, load_run_config, settings
from oppspec.services.commands import Command, run_command
from oppspec.utils.exceptions import OppSpecError
from oppspec.utils.logging import bind_run_context, setup_logging, setup_sentry


logger = structlog.get_logger()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oppspec",
        description="Opportunistic spectrum access: fit, analyze, optimize, simulate, sweep.",
    )
    parser.add_argument("command", choices=[c.value for c in Command])
    parser.add_argument("--config", required=True, type=Path, help="run configuration (JSON)")
    parser.add_argument("--seed", type=int, default=None, help="override the configured seed")
    parser.add_argument("--out", type=Path, default=None, help="override the output directory")
    parser.add_argument("--log-level", default=None, type=str.upper, choices=LOG_LEVELS)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return parser


def error_record(command: str, exc: Exception) -> dict:
    """Machine-readable failure description."""
    record = {
        "status": "error",
        "command": command,
        "error": type(exc).__name__,
        "message": str(exc),
    }
    for attr in ("path", "line", "level"):
        value = getattr(exc, attr, None)
        if value is not None:
            record[attr] = value
    return record


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; prints a JSON status record on stdout and returns the exit code."""
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    setup_sentry()
    bind_run_context(args.command)

    logger.info(
        "Configuration loaded",
        environment=settings.environment,
        debug=settings.debug,
        workers=settings.workers,
    )

    try:
        cfg = load_run_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["output_dir"] = args.out.resolve()
        if overrides:
            cfg = cfg.model_copy(update=overrides)
        bind_run_context(args.command, cfg.seed)
        outputs = run_command(Command(args.command), cfg, workers=settings.workers)
    except (OppSpecError, ValidationError) as e:
        record = error_record(args.command, e)
        logger.error("Command failed", **record)
        print(json.dumps(record))
        return 1

    print(json.dumps({"status": "ok", "command": args.command, "outputs": [str(p) for p in outputs]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
