"""Logging functionality for popinfer."""

import json
import logging
import sys
import traceback
from datetime import datetime, timezone
from typing import IO, Any, Dict, Optional, Union

from .core import get_run_id


class RunEventHandler(logging.Handler):
    """Logging handler that writes records as JSON run events.

    Each record becomes one line holding the run ID, severity, origin and
    message, so the progress of a sweep can be followed or filtered with
    ordinary line tools.
    """

    def __init__(self, level=logging.NOTSET, stream: Optional[IO[str]] = None):
        super().__init__(level)
        self.stream = stream
        self.setFormatter(logging.Formatter("%(message)s"))

    def build_event(self, record: logging.LogRecord) -> Dict[str, Any]:
        """Convert a log record into an event dictionary.

        Args:
            record: The log record to convert

        Returns:
            The event payload
        """
        event = {
            "runId": get_run_id(),
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            "severity": record.levelname.lower(),
            "logger": record.name,
            "source": f"{record.module}.{record.funcName}",
            "line": record.lineno,
            "details": record.getMessage(),
        }
        if record.exc_info and record.exc_info[0]:
            event["stacktrace"] = traceback.format_exception(*record.exc_info)
        return event

    def emit(self, record: logging.LogRecord) -> None:
        """Write a log record as a JSON line.

        Args:
            record: The log record to process
        """
        try:
            stream = self.stream if self.stream is not None else sys.stderr
            stream.write(json.dumps(self.build_event(record)) + "\n")
            stream.flush()
        except Exception as e:
            # Fallback to stderr if something goes wrong
            sys.stderr.write(f"popinfer logging error: {str(e)}\n")


def setup_logging(
    level: Union[int, str] = logging.INFO,
    json_logs: bool = False,
    stream: Optional[IO[str]] = None,
) -> logging.Handler:
    """Set up popinfer logging.

    Installs one handler on the ``popinfer`` logger, replacing any handler a
    previous call installed.

    Args:
        level: Level for the popinfer logger
        json_logs: Write JSON run events instead of plain text lines
        stream: Target stream, stderr when None

    Returns:
        The installed handler
    """
    logger = logging.getLogger("popinfer")
    for handler in logger.handlers[:]:
        if getattr(handler, "_popinfer_owned", False):
            logger.removeHandler(handler)

    if json_logs:
        handler: logging.Handler = RunEventHandler(stream=stream)
    else:
        handler = logging.StreamHandler(stream if stream is not None else sys.stderr)
        handler.setFormatter(
            logging.Formatter("%(asctime)s %(levelname)s [%(name)s] %(message)s")
        )
    handler._popinfer_owned = True  # type: ignore[attr-defined]

    logger.addHandler(handler)
    logger.setLevel(level)
    logger.propagate = False

    logger.debug("popinfer logging initialized")
    return handler
