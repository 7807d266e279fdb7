"""
Logging configuration using structlog.
"""

import logging
import sys
from typing import Optional

import structlog

from oppspec import __version__
from oppspec.config import settings


def _stderr_logger(*args) -> structlog.PrintLogger:
    # sys.stderr looked up per logger, not frozen at configure time
    return structlog.PrintLogger(file=sys.stderr)


def setup_logging(log_level: Optional[str] = None) -> None:
    """
    Configure structured logging on stderr; stdout carries the command status record.

    Args:
        log_level: Log level (DEBUG, INFO, WARNING, ERROR)
    """
    log_level = log_level or settings.log_level or ("DEBUG" if settings.debug else "INFO")

    structlog.configure(
        processors=[
            structlog.contextvars.merge_contextvars,
            structlog.processors.add_log_level,
            structlog.processors.StackInfoRenderer(),
            structlog.dev.set_exc_info,
            structlog.processors.TimeStamper(fmt="iso"),
            # Use colored output in development, JSON in production
            structlog.dev.ConsoleRenderer()
            if settings.debug
            else structlog.processors.JSONRenderer(),
        ],
        wrapper_class=structlog.make_filtering_bound_logger(
            getattr(logging, log_level)
        ),
        context_class=dict,
        logger_factory=_stderr_logger,
        # main() may run repeatedly in one process; cached loggers would keep a stale stream
        cache_logger_on_first_use=False,
    )

    logging.basicConfig(
        format="%(message)s",
        stream=sys.stderr,
        level=getattr(logging, log_level),
    )

    # route numpy/scipy RuntimeWarnings into the log stream
    logging.captureWarnings(True)


def bind_run_context(command: str, seed: Optional[int] = None) -> None:
    """Attach the command and root seed to every following log event."""
    structlog.contextvars.clear_contextvars()
    structlog.contextvars.bind_contextvars(command=command)
    if seed is not None:
        structlog.contextvars.bind_contextvars(seed=seed)


def setup_sentry() -> None:
    """
    Configure Sentry for error tracking.
    """
    if not settings.sentry_dsn:
        return

    try:
        import sentry_sdk

        sentry_sdk.init(
            dsn=settings.sentry_dsn,
            environment=settings.environment,
            release=f"oppspec@{__version__}",
        )

        structlog.get_logger().info("Sentry initialized", release=__version__)

    except ImportError:
        structlog.get_logger().warning(
            "Sentry SDK not installed, error tracking disabled"
        )
