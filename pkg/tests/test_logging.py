"""Tests for popinfer logging functionality."""

import io
import json
import logging
import sys
import unittest
from unittest.mock import patch

from popinfer.logging import RunEventHandler, setup_logging


def make_record(level=logging.ERROR, msg="Test message", args=()):
    return logging.LogRecord(
        name="popinfer.harness",
        level=level,
        pathname="harness.py",
        lineno=42,
        msg=msg,
        args=args,
        exc_info=None,
    )


class TestRunEventHandler(unittest.TestCase):
    """Test the JSON run event handler."""

    @patch("popinfer.logging.get_run_id")
    def test_build_event(self, mock_get_run_id):
        """Test the fields of a run event."""
        mock_get_run_id.return_value = "test-run-id"
        event = RunEventHandler().build_event(make_record(msg="Sweep %s finished", args=("same_maps_sweep",)))
        self.assertEqual(event["runId"], "test-run-id")
        self.assertEqual(event["severity"], "error")
        self.assertEqual(event["logger"], "popinfer.harness")
        self.assertEqual(event["details"], "Sweep same_maps_sweep finished")
        self.assertEqual(event["line"], 42)
        self.assertNotIn("stacktrace", event)

    def test_exception_stacktrace(self):
        """Test that exception info is attached as a stack trace."""
        try:
            raise ValueError("boom")
        except ValueError:
            record = make_record()
            record.exc_info = sys.exc_info()
        event = RunEventHandler().build_event(record)
        self.assertIn("ValueError: boom", "".join(event["stacktrace"]))

    @patch("popinfer.logging.get_run_id")
    def test_emit(self, mock_get_run_id):
        """Test that each record is written as one JSON line."""
        mock_get_run_id.return_value = "test-run-id"
        stream = io.StringIO()
        handler = RunEventHandler(stream=stream)
        handler.emit(make_record(level=logging.INFO, msg="first"))
        handler.emit(make_record(level=logging.WARNING, msg="second"))
        lines = stream.getvalue().splitlines()
        self.assertEqual(len(lines), 2)
        self.assertEqual(json.loads(lines[0])["details"], "first")
        self.assertEqual(json.loads(lines[1])["severity"], "warning")


class TestSetupLogging(unittest.TestCase):
    """Test setting up the popinfer logger."""

    def setUp(self):
        """Set up the test environment."""
        self.logger = logging.getLogger("popinfer")
        self.saved = (self.logger.handlers[:], self.logger.level, self.logger.propagate)
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)

    def tearDown(self):
        handlers, level, propagate = self.saved
        for handler in self.logger.handlers[:]:
            self.logger.removeHandler(handler)
        for handler in handlers:
            self.logger.addHandler(handler)
        self.logger.setLevel(level)
        self.logger.propagate = propagate

    def test_json_logs(self):
        """Test that JSON logging writes run events to the given stream."""
        stream = io.StringIO()
        handler = setup_logging(level=logging.INFO, json_logs=True, stream=stream)
        self.assertIsInstance(handler, RunEventHandler)
        logging.getLogger("popinfer.harness").info("Running 'same_maps'")
        event = json.loads(stream.getvalue().splitlines()[-1])
        self.assertEqual(event["details"], "Running 'same_maps'")
        self.assertEqual(event["logger"], "popinfer.harness")

    def test_plain_logs(self):
        """Test the plain text format and the level filter."""
        stream = io.StringIO()
        setup_logging(level="WARNING", stream=stream)
        logging.getLogger("popinfer.reports").info("hidden")
        logging.getLogger("popinfer.reports").warning("Realization 3 failed")
        output = stream.getvalue()
        self.assertNotIn("hidden", output)
        self.assertIn("WARNING [popinfer.reports] Realization 3 failed", output)

    def test_replaces_own_handler(self):
        """Test that repeated setup keeps a single owned handler and foreign handlers."""
        foreign = logging.NullHandler()
        self.logger.addHandler(foreign)
        setup_logging(stream=io.StringIO())
        second = setup_logging(json_logs=True, stream=io.StringIO())
        owned = [h for h in self.logger.handlers if getattr(h, "_popinfer_owned", False)]
        self.assertEqual(owned, [second])
        self.assertIn(foreign, self.logger.handlers)
        self.assertFalse(self.logger.propagate)


if __name__ == "__main__":
    unittest.main()
