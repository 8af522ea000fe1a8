"""Core runtime settings and run context for popinfer."""

import contextvars
import logging
import uuid
from typing import Any, Dict, Optional

# Context variable for run ID propagation
run_id_var = contextvars.ContextVar[str]("run_id", default="")

# Process-wide defaults
_DEFAULTS: Dict[str, Any] = {
    "predictability_tolerance": 1e-8,
    "kde_bandwidth": "scott",
    "ood_alpha": 0.05,
    "log_level": "INFO",
    "json_logs": False,
    "initialized": False,
}

_config: Dict[str, Any] = dict(_DEFAULTS)

logger = logging.getLogger("popinfer")


def init(
    log_level: str = "INFO",
    json_logs: bool = False,
    predictability_tolerance: float = 1e-8,
    kde_bandwidth: str = "scott",
    ood_alpha: float = 0.05,
) -> None:
    """Initialize popinfer with configuration options.

    Args:
        log_level: Name of the level for the popinfer logger
        json_logs: Whether log records are written as JSON events
        predictability_tolerance: Slack below unity allowed for the
            singular values of the predictability spectrum
        kde_bandwidth: Default bandwidth rule for kernel density estimates
        ood_alpha: Default tail mass for out-of-distribution flags
    """
    _config["log_level"] = log_level
    _config["json_logs"] = json_logs
    _config["predictability_tolerance"] = predictability_tolerance
    _config["kde_bandwidth"] = kde_bandwidth
    _config["ood_alpha"] = ood_alpha
    _config["initialized"] = True

    from .logging import setup_logging
    setup_logging(level=log_level, json_logs=json_logs)

    logger.debug(f"popinfer initialized with config: {_config}")


def reset() -> None:
    """Restore the default settings."""
    _config.clear()
    _config.update(_DEFAULTS)


def generate_run_id() -> str:
    """Generate a unique run ID.

    Returns:
        A unique run ID as a string
    """
    return str(uuid.uuid4())


def get_run_id() -> str:
    """Get the current run ID from context.

    Returns:
        The current run ID or empty string if not set
    """
    return run_id_var.get()


def set_run_id(run_id: Optional[str] = None) -> str:
    """Set the run ID in the current context.

    Args:
        run_id: The run ID to set, or None to generate a new one

    Returns:
        The run ID that was set
    """
    if not run_id:
        run_id = generate_run_id()
    run_id_var.set(run_id)
    return run_id


def get_config() -> Dict[str, Any]:
    """Get the current configuration.

    Returns:
        The current configuration dictionary
    """
    return _config


def is_initialized() -> bool:
    """Check if popinfer has been initialized.

    Returns:
        True if initialized, False otherwise
    """
    return _config.get("initialized", False)
