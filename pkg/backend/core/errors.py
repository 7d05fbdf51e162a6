"""
Centralized Error Helpers
Services and commands use these helpers to log and build lab exceptions
"""

import logging

from backend.core.exceptions import ConfigError, IoError, ViolationReport

logger = logging.getLogger(__name__)


def config_error(message: str, field_path: str = "") -> ConfigError:
    """
    Invalid experiment configuration or input payload
    Use for: unknown fields, malformed space files, out-of-range parameters
    """
    logger.warning(f"Config Error: {field_path or '<root>'}: {message}")
    return ConfigError(message, field_path=field_path)


def io_failure(message: str, path: str, exception: Exception | None = None) -> IoError:
    """
    Report or input file could not be read or written
    """
    if exception:
        logger.error(f"IO Error: {message} ({path})", exc_info=exception)
    else:
        logger.error(f"IO Error: {message} ({path})")

    return IoError(message, path=path)


def invariant_violation(check: str, worst_slack: float, details: dict | None = None) -> ViolationReport:
    """
    A verified inequality failed beyond tolerance
    Use for: embedding, sbor and split checks whose failure signals a bug
    """
    logger.error(f"Invariant violated: {check} | worst slack {worst_slack:.3e}")
    return ViolationReport(check, worst_slack, details)
