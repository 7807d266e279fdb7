import io
import json
import sys

import structlog

from oppspec.utils.logging import bind_run_context, setup_logging


def test_logs_follow_the_current_stderr(monkeypatch):
    setup_logging("INFO")
    first = io.StringIO()
    monkeypatch.setattr(sys, "stderr", first)
    structlog.get_logger().info("First event")
    first.close()

    second = io.StringIO()
    monkeypatch.setattr(sys, "stderr", second)
    structlog.get_logger().info("Second event")
    assert json.loads(second.getvalue())["event"] == "Second event"


def test_run_context_is_bound(monkeypatch):
    setup_logging("INFO")
    stream = io.StringIO()
    monkeypatch.setattr(sys, "stderr", stream)
    bind_run_context("simulate", seed=7)
    structlog.get_logger().info("Replication finished")
    event = json.loads(stream.getvalue())
    assert event["command"] == "simulate"
    assert event["seed"] == 7
    assert event["level"] == "info"


def test_level_filters_events(monkeypatch):
    setup_logging("WARNING")
    stream = io.StringIO()
    monkeypatch.setattr(sys, "stderr", stream)
    structlog.get_logger().info("Hidden")
    assert stream.getvalue() == ""
